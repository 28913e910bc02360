#ifndef FKA_TYPES_HPP
#define FKA_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fka {

using TokenId = std::int32_t;

enum class Split { PtTrain, PtTest, CptTrain, CptTest };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::PtTrain: return "pt_train";
        case Split::PtTest: return "pt_test";
        case Split::CptTrain: return "cpt_train";
        case Split::CptTest: return "cpt_test";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    if (s == "pt_train") return Split::PtTrain;
    if (s == "pt_test") return Split::PtTest;
    if (s == "cpt_train") return Split::CptTrain;
    if (s == "cpt_test") return Split::CptTest;
    throw std::invalid_argument("unknown split tag: " + s);
}

inline bool is_train(Split s) { return s == Split::PtTrain || s == Split::CptTrain; }
inline bool is_pt(Split s) { return s == Split::PtTrain || s == Split::PtTest; }

// A rendered prompt (template tokens with subject substituted, terminated by
// the query token) plus the gold object token(s).
struct Sample {
    std::vector<TokenId> prompt;                      // length L+1, last token is q
    std::vector<TokenId> object;                      // gold object token(s), first is the training target
    int individual_id = -1;
    int template_id = -1;
    int bio_id = -1;                                  // biography index within the individual
    Split split = Split::PtTrain;
    std::vector<std::pair<TokenId, int>> delta;       // occurrence count of each token in prompt, sorted by token

    TokenId gold() const { return object.front(); }
};

// Recount the prompt from scratch; the stored delta must match this exactly.
std::vector<std::pair<TokenId, int>> count_occurrences(const std::vector<TokenId>& prompt);

}  // namespace fka

#endif
