#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "doctest.h"
#include "fka/corpus.hpp"
#include "helpers.hpp"

using namespace fka;

namespace {

WorldConfig small_config() {
    WorldConfig c;
    c.subject_pool = 10;
    c.templates_per_relation = 4;
    c.objects_per_relation = 6;
    c.pt_individuals = 10;
    c.cpt_individuals = 2;
    return c;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("world generation satisfies role-range invariants") {
    World world = gen_world(small_config(), 7);
    CHECK_NOTHROW(validate_world(world));
    CHECK(world.vocab_size > 0);
    CHECK(world.query_token >= 0);
    CHECK(world.lamol_trigger >= 0);
    CHECK(static_cast<int>(world.templates.size()) == kNumRelations * 4);
    // every token below vocab has exactly one role here (no explicit extra vocab)
    for (TokenId t = 0; t < world.vocab_size; ++t) CHECK(world.token_role(t) != "unknown");
}

TEST_CASE("individual split keeps the 5:1 ratio") {
    WorldConfig c = small_config();
    c.pt_individuals = 1000;
    c.cpt_individuals = 200;
    c.subject_pool = 25;
    World world = gen_world(c, 3);
    CHECK(world.pt_individuals == 1000);
    CHECK(world.individuals.size() == 1200);
    int pt = 0, cpt = 0;
    for (const Individual& ind : world.individuals) (world.is_pt_individual(ind.id) ? pt : cpt)++;
    CHECK(pt == 5 * cpt);
}

TEST_CASE("same seed gives byte-identical world serialization") {
    World a = gen_world(small_config(), 42);
    World b = gen_world(small_config(), 42);
    save_world("tmp_world_a.json", a);
    save_world("tmp_world_b.json", b);
    CHECK(file_bytes("tmp_world_a.json") == file_bytes("tmp_world_b.json"));
    World c = gen_world(small_config(), 43);
    save_world("tmp_world_c.json", c);
    CHECK(file_bytes("tmp_world_a.json") != file_bytes("tmp_world_c.json"));
    std::remove("tmp_world_a.json");
    std::remove("tmp_world_b.json");
    std::remove("tmp_world_c.json");
}

TEST_CASE("world JSON round-trips") {
    World a = gen_world(small_config(), 11);
    save_world("tmp_world_rt.json", a);
    World b = load_world("tmp_world_rt.json");
    save_world("tmp_world_rt2.json", b);
    CHECK(file_bytes("tmp_world_rt.json") == file_bytes("tmp_world_rt2.json"));
    std::remove("tmp_world_rt.json");
    std::remove("tmp_world_rt2.json");
}

TEST_CASE("one biography per individual under the single-bio strategy") {
    WorldConfig c = small_config();
    c.pt_individuals = 10;
    c.cpt_individuals = 0;
    World world = gen_world(c, 5);
    RenderOptions opts;
    opts.aug = AugStrategy::one();
    RenderResult res = render_corpus(world, opts, 9);
    std::set<std::pair<int, int>> train_bios;
    for (const Sample& s : res.samples)
        if (is_train(s.split)) train_bios.insert({s.individual_id, s.bio_id});
    CHECK(train_bios.size() == 10);
    // each training biography states every relation once
    auto train = filter_split(res.samples, Split::PtTrain);
    CHECK(train.size() == 10 * static_cast<size_t>(kNumRelations));
}

TEST_CASE("rendered samples match an independent re-render from the definitions") {
    World world = gen_world(small_config(), 21);
    RenderOptions opts;
    opts.aug = AugStrategy::k_aug(3);
    RenderResult res = render_corpus(world, opts, 13);
    REQUIRE(!res.samples.empty());
    for (const Sample& s : res.samples) {
        const Template& tpl = world.template_by_id(s.template_id);
        const Individual& ind = world.individuals.at(static_cast<size_t>(s.individual_id));
        std::vector<TokenId> expected;
        for (int e : tpl.pattern)
            expected.push_back(e >= 0 ? e : ind.subject.at(static_cast<size_t>(-e - 1)));
        expected.push_back(world.query_token);
        CHECK(s.prompt == expected);
        CHECK(s.object == ind.attributes.at(static_cast<size_t>(tpl.relation)));
        CHECK(s.delta == count_occurrences(s.prompt));
    }
}

TEST_CASE("test biographies prefer templates unused in training") {
    World world = gen_world(small_config(), 33);
    RenderOptions opts;
    opts.aug = AugStrategy::one();
    RenderResult res = render_corpus(world, opts, 17);
    CHECK(!res.template_fallback);
    std::unordered_map<int, std::set<int>> train_templates;  // individual -> template ids
    for (const Sample& s : res.samples)
        if (is_train(s.split)) train_templates[s.individual_id].insert(s.template_id);
    for (const Sample& s : res.samples)
        if (!is_train(s.split)) CHECK(!train_templates[s.individual_id].count(s.template_id));
}

TEST_CASE("template reuse is flagged when no unused template exists") {
    WorldConfig c = small_config();
    c.templates_per_relation = 1;
    World world = gen_world(c, 3);
    RenderOptions opts;
    opts.aug = AugStrategy::one();
    RenderResult res = render_corpus(world, opts, 3);
    CHECK(res.template_fallback);
}

TEST_CASE("Poisson biography counts have mean close to lambda") {
    WorldConfig c = small_config();
    c.subject_pool = 30;
    c.templates_per_relation = 2;
    c.pt_individuals = 10000;
    c.cpt_individuals = 0;
    World world = gen_world(c, 1);
    RenderOptions opts;
    opts.aug = AugStrategy::poisson(5.0);
    RenderResult res = render_corpus(world, opts, 123);
    std::set<std::pair<int, int>> train_bios;
    for (const Sample& s : res.samples)
        if (is_train(s.split)) train_bios.insert({s.individual_id, s.bio_id});
    const double mean = static_cast<double>(train_bios.size()) / 10000.0;
    CHECK(mean >= 4.8);
    CHECK(mean <= 5.2);
}

TEST_CASE("trigger token is prepended to the first sentence of each training biography") {
    World world = gen_world(small_config(), 8);
    RenderOptions opts;
    opts.aug = AugStrategy::k_aug(2);
    opts.lamol_trigger_in_training = true;
    RenderResult res = render_corpus(world, opts, 4);
    std::map<std::pair<int, int>, int> trigger_count;
    for (const Sample& s : res.samples) {
        if (!is_train(s.split)) continue;
        if (s.prompt.front() == world.lamol_trigger) trigger_count[{s.individual_id, s.bio_id}]++;
    }
    for (const auto& [bio, n] : trigger_count) CHECK(n == 1);
    std::set<std::pair<int, int>> train_bios;
    for (const Sample& s : res.samples)
        if (is_train(s.split)) train_bios.insert({s.individual_id, s.bio_id});
    CHECK(trigger_count.size() == train_bios.size());
}

TEST_CASE("stats match a brute-force tally") {
    std::vector<Sample> samples = {
        make_sample({0, 1, 1, 9}, {5}),
        make_sample({0, 2, 9}, {5}),
        make_sample({2, 3, 9}, {6}),
    };
    CorpusStats stats = compute_stats(samples);

    // independent tally straight off the raw prompts
    std::unordered_map<TokenId, long> gold_counts;
    std::unordered_map<TokenId, std::unordered_map<TokenId, long>> cooc;
    std::unordered_map<TokenId, long> denom;
    for (const Sample& s : samples) {
        gold_counts[s.gold()]++;
        for (TokenId t : s.prompt) {
            cooc[s.gold()][t]++;
            denom[s.gold()]++;
        }
    }
    CHECK(stats.total_samples == 3);
    for (auto& [o, c] : gold_counts)
        CHECK(stats.prob_o(o) == doctest::Approx(static_cast<double>(c) / 3.0));
    for (auto& [o, per_token] : cooc)
        for (auto& [t, c] : per_token)
            CHECK(stats.prob_s_given_o(t, o) ==
                  doctest::Approx(static_cast<double>(c) / static_cast<double>(denom[o])));
    CHECK(stats.prob_s_given_o(1, 5) == doctest::Approx(2.0 / 7.0));
    CHECK(stats.prob_s_given_o(3, 5) == 0.0);
    CHECK(stats.assoc_objects.at(1) == std::vector<TokenId>{5, 5});
}

TEST_CASE("single-association token has support only on its object") {
    std::vector<Sample> samples = {
        make_sample({7, 9}, {3}),
        make_sample({8, 9}, {4}),
    };
    CorpusStats stats = compute_stats(samples);
    CHECK(stats.assoc_objects.at(7) == std::vector<TokenId>{3});
    CHECK(stats.prob_s_given_o(7, 3) > 0);
    CHECK(stats.prob_s_given_o(7, 4) == 0.0);
}

TEST_CASE("uniform object assignment gives a uniform prior") {
    std::vector<Sample> samples;
    for (TokenId o = 1; o <= 4; ++o) samples.push_back(make_sample({0, 9}, {o}));
    CorpusStats stats = compute_stats(samples);
    for (TokenId o = 1; o <= 4; ++o) CHECK(stats.prob_o(o) == doctest::Approx(0.25));
}

TEST_CASE("sample TSV round-trips") {
    World world = gen_world(small_config(), 2);
    RenderOptions opts;
    RenderResult res = render_corpus(world, opts, 6);
    save_samples("tmp_samples.tsv", res.samples);
    std::vector<Sample> loaded = load_samples("tmp_samples.tsv");
    REQUIRE(loaded.size() == res.samples.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].prompt == res.samples[i].prompt);
        CHECK(loaded[i].object == res.samples[i].object);
        CHECK(loaded[i].split == res.samples[i].split);
        CHECK(loaded[i].individual_id == res.samples[i].individual_id);
        CHECK(loaded[i].template_id == res.samples[i].template_id);
        CHECK(loaded[i].delta == res.samples[i].delta);
    }
    std::remove("tmp_samples.tsv");
}

TEST_CASE("split filtering keeps only the requested split") {
    World world = gen_world(small_config(), 2);
    RenderResult res = render_corpus(world, RenderOptions{}, 6);
    auto pt_train = filter_split(res.samples, Split::PtTrain);
    CHECK(!pt_train.empty());
    for (const Sample& s : pt_train) CHECK(s.split == Split::PtTrain);
    size_t total = 0;
    for (Split sp : {Split::PtTrain, Split::PtTest, Split::CptTrain, Split::CptTest})
        total += filter_split(res.samples, sp).size();
    CHECK(total == res.samples.size());
}

TEST_CASE("invalid configs are rejected") {
    WorldConfig c = small_config();
    c.subject_pool = 2;  // 2^3 = 8 < 12 individuals
    CHECK_THROWS(gen_world(c, 1));
    c = small_config();
    c.vocab_size = 10;  // far below the role ranges
    CHECK_THROWS(gen_world(c, 1));
    c = small_config();
    c.length_bands = {{2, 3}};  // band not above the 3 subject tokens
    CHECK_THROWS(gen_world(c, 1));
}
