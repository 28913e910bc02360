#include "fka/minhash.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <stdexcept>

#include "fka/rng.hpp"

namespace fka {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t shingle_hash(const std::vector<TokenId>& tokens, size_t start, int len,
                           std::uint64_t salt) {
    std::uint64_t h = salt;
    for (int i = 0; i < len; ++i)
        h = mix64(h ^ static_cast<std::uint64_t>(tokens[start + static_cast<size_t>(i)]));
    return h;
}

}  // namespace

MinHasher::MinHasher(int shingle_len, int num_hashes, std::uint64_t seed)
    : shingle_len_(shingle_len) {
    if (shingle_len < 1) throw std::invalid_argument("MinHasher: shingle_len must be >= 1");
    if (num_hashes < 16) throw std::invalid_argument("MinHasher: num_hashes must be >= 16");
    Rng rng(seed);
    for (int i = 0; i < num_hashes; ++i) salts_.push_back(rng());
}

std::vector<std::uint64_t> MinHasher::signature(const std::vector<TokenId>& tokens) const {
    std::vector<std::uint64_t> sig(salts_.size(), std::numeric_limits<std::uint64_t>::max());
    // Short sequences hash as a single truncated shingle.
    const size_t n_shingles =
        tokens.size() >= static_cast<size_t>(shingle_len_) ? tokens.size() - shingle_len_ + 1 : 1;
    const int effective_len = static_cast<int>(
        std::min<size_t>(tokens.size(), static_cast<size_t>(shingle_len_)));
    for (size_t start = 0; start < n_shingles; ++start)
        for (size_t h = 0; h < salts_.size(); ++h)
            sig[h] = std::min(sig[h], shingle_hash(tokens, start, effective_len, salts_[h]));
    return sig;
}

double MinHasher::estimate_jaccard(const std::vector<std::uint64_t>& a,
                                   const std::vector<std::uint64_t>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("estimate_jaccard: signature size mismatch");
    int match = 0;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i]) match++;
    return static_cast<double>(match) / static_cast<double>(a.size());
}

double exact_jaccard(const std::vector<TokenId>& a, const std::vector<TokenId>& b, int shingle_len) {
    auto shingles = [shingle_len](const std::vector<TokenId>& t) {
        std::set<std::vector<TokenId>> out;
        if (t.empty()) return out;
        if (t.size() < static_cast<size_t>(shingle_len)) {
            out.insert(t);
            return out;
        }
        for (size_t i = 0; i + static_cast<size_t>(shingle_len) <= t.size(); ++i)
            out.insert(std::vector<TokenId>(t.begin() + static_cast<long>(i),
                                            t.begin() + static_cast<long>(i) + shingle_len));
        return out;
    };
    auto sa = shingles(a), sb = shingles(b);
    size_t inter = 0;
    for (const auto& s : sa)
        if (sb.count(s)) inter++;
    const size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace fka
