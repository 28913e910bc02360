#ifndef FKA_TESTS_HELPERS_HPP
#define FKA_TESTS_HELPERS_HPP

#include <vector>

#include "fka/types.hpp"

inline fka::Sample make_sample(std::vector<fka::TokenId> prompt, std::vector<fka::TokenId> object,
                               fka::Split split = fka::Split::PtTrain, int individual = 0,
                               int template_id = 0, int bio = 0) {
    fka::Sample s;
    s.prompt = std::move(prompt);
    s.object = std::move(object);
    s.split = split;
    s.individual_id = individual;
    s.template_id = template_id;
    s.bio_id = bio;
    s.delta = fka::count_occurrences(s.prompt);
    return s;
}

#endif
