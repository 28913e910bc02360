#ifndef FKA_CORPUS_HPP
#define FKA_CORPUS_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fka/types.hpp"

namespace fka {

inline constexpr int kNumRelations = 5;
inline const std::array<const char*, kNumRelations> kRelationNames = {
    "birthday", "birthplace", "university", "major", "company"};

struct TokenRange {
    TokenId begin = 0;
    TokenId end = 0;  // exclusive
    int size() const { return end - begin; }
    bool contains(TokenId t) const { return t >= begin && t < end; }
};

struct WorldConfig {
    int subject_parts = 3;             // K: tokens per subject
    int subject_pool = 25;             // candidates per subject part
    int relations = kNumRelations;
    int templates_per_relation = 10;
    int objects_per_relation = 20;
    int object_tokens = 1;             // tokens per object value (1 = single-token objects)
    int pt_individuals = 1000;
    int cpt_individuals = 200;
    // Prompt-length bands (template tokens + subject tokens, excluding q).
    // Templates are distributed evenly across bands.
    std::vector<std::pair<int, int>> length_bands = {{6, 9}, {10, 13}};
    std::optional<int> vocab_size;     // explicit D; error if too small for the pools
};

struct Template {
    int id = -1;
    int relation = -1;
    // Entries >= 0 are concrete template tokens; entry -(k+1) is the slot for
    // subject part k. Length equals the prompt length minus the query token.
    std::vector<int> pattern;
};

struct Individual {
    int id = -1;
    std::vector<TokenId> subject;                 // K tokens
    std::vector<std::vector<TokenId>> attributes; // relation -> object token(s)
};

struct World {
    int vocab_size = 0;
    WorldConfig config;
    std::vector<TokenRange> subject_ranges;   // one per subject part
    std::vector<TokenRange> template_ranges;  // one per relation (template token pools)
    std::vector<TokenRange> object_ranges;    // one per relation
    TokenId query_token = -1;
    TokenId lamol_trigger = -1;               // reserved generation-trigger token
    std::vector<Template> templates;          // all relations, id == index
    std::vector<Individual> individuals;      // PT individuals first, then CPT
    int pt_individuals = 0;

    bool is_pt_individual(int id) const { return id < pt_individuals; }
    const Template& template_by_id(int id) const { return templates.at(static_cast<size_t>(id)); }
    std::vector<int> templates_for_relation(int relation) const;
    // Role of a token id, for reports: "subject", "template", "object", "query", "trigger".
    std::string token_role(TokenId t) const;
};

World gen_world(const WorldConfig& config, std::uint64_t seed);
void validate_world(const World& world);  // throws on any invariant violation

enum class AugKind { OneAug, KAug, PoissonAug };

struct AugStrategy {
    AugKind kind = AugKind::OneAug;
    int k = 5;           // KAug
    double lambda = 5.0; // PoissonAug
    static AugStrategy one() { return {AugKind::OneAug, 5, 5.0}; }
    static AugStrategy k_aug(int k) { return {AugKind::KAug, k, 5.0}; }
    static AugStrategy poisson(double lambda) { return {AugKind::PoissonAug, 5, lambda}; }
};

struct RenderOptions {
    AugStrategy aug;
    int test_bios_per_individual = 1;
    // Prepend the LAMOL trigger token to each training biography's first
    // sentence so the pretrained model learns to continue from it.
    bool lamol_trigger_in_training = false;
};

struct RenderResult {
    std::vector<Sample> samples;
    // Set when some individual had no unused template left for a test
    // biography and a training template was reused.
    bool template_fallback = false;
};

RenderResult render_corpus(const World& world, const RenderOptions& opts, std::uint64_t seed);

// Empirical frequencies over a training split, by exact counting.
struct CorpusStats {
    // Distribution over gold (first) object tokens.
    std::unordered_map<TokenId, double> pr_o;
    // pr_s_given_o[o][s]: occurrence-weighted conditional of prompt tokens given gold o.
    std::unordered_map<TokenId, std::unordered_map<TokenId, double>> pr_s_given_o;
    // Multiset of gold objects co-occurring with each prompt token (one entry
    // per occurrence).
    std::unordered_map<TokenId, std::vector<TokenId>> assoc_objects;
    std::map<std::string, std::int64_t> sample_counts;  // per split tag
    std::int64_t total_samples = 0;

    double prob_o(TokenId o) const;
    double prob_s_given_o(TokenId s, TokenId o) const;
    bool seen(TokenId s) const { return assoc_objects.count(s) > 0; }
};

CorpusStats compute_stats(const std::vector<Sample>& training_samples);

// Line-delimited serialization: split \t individual \t template \t prompt ids \t object ids.
void write_samples(std::ostream& os, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(std::istream& is);
void save_samples(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_samples(const std::string& path);

void save_world(const std::string& path, const World& world);
World load_world(const std::string& path);

std::vector<Sample> filter_split(const std::vector<Sample>& samples, Split split);

}  // namespace fka

#endif
