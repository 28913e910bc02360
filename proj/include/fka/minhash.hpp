#ifndef FKA_MINHASH_HPP
#define FKA_MINHASH_HPP

#include <cstdint>
#include <vector>

#include "fka/types.hpp"

namespace fka {

// MinHash signature over token shingles; estimated Jaccard similarity is the
// fraction of matching signature slots.
class MinHasher {
  public:
    MinHasher(int shingle_len, int num_hashes, std::uint64_t seed);

    std::vector<std::uint64_t> signature(const std::vector<TokenId>& tokens) const;
    static double estimate_jaccard(const std::vector<std::uint64_t>& a,
                                   const std::vector<std::uint64_t>& b);

    int shingle_len() const { return shingle_len_; }

  private:
    int shingle_len_;
    std::vector<std::uint64_t> salts_;
};

// Exact Jaccard over the shingle sets, for verification.
double exact_jaccard(const std::vector<TokenId>& a, const std::vector<TokenId>& b, int shingle_len);

}  // namespace fka

#endif
