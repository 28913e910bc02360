#include "fka/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fka/rng.hpp"
#include "json.hpp"

namespace fka {

std::vector<std::pair<TokenId, int>> count_occurrences(const std::vector<TokenId>& prompt) {
    std::map<TokenId, int> counts;
    for (TokenId t : prompt) counts[t]++;
    return {counts.begin(), counts.end()};
}

std::vector<int> World::templates_for_relation(int relation) const {
    std::vector<int> out;
    for (const Template& t : templates)
        if (t.relation == relation) out.push_back(t.id);
    return out;
}

std::string World::token_role(TokenId t) const {
    for (const TokenRange& r : subject_ranges)
        if (r.contains(t)) return "subject";
    for (const TokenRange& r : template_ranges)
        if (r.contains(t)) return "template";
    for (const TokenRange& r : object_ranges)
        if (r.contains(t)) return "object";
    if (t == query_token) return "query";
    if (t == lamol_trigger) return "trigger";
    return "unknown";
}

World gen_world(const WorldConfig& config, std::uint64_t seed) {
    if (config.subject_parts < 1 || config.subject_pool < 1 || config.relations < 1 ||
        config.templates_per_relation < 1 || config.objects_per_relation < 1 ||
        config.object_tokens < 1 || config.length_bands.empty())
        throw std::invalid_argument("gen_world: invalid config");

    const int total_individuals = config.pt_individuals + config.cpt_individuals;
    double product_space = 1.0;
    for (int k = 0; k < config.subject_parts; ++k) product_space *= config.subject_pool;
    if (product_space < total_individuals)
        throw std::invalid_argument("gen_world: subject pool exhausted (" +
                                    std::to_string(total_individuals) + " individuals requested, product space " +
                                    std::to_string(static_cast<long long>(product_space)) + ")");

    Rng rng(seed);
    World world;
    world.config = config;
    world.pt_individuals = config.pt_individuals;

    // Decide template lengths first so template token pools can be sized.
    // Templates of each relation are spread evenly across the length bands.
    const int bands = static_cast<int>(config.length_bands.size());
    std::vector<std::vector<int>> prompt_lengths(config.relations);
    for (int r = 0; r < config.relations; ++r) {
        for (int t = 0; t < config.templates_per_relation; ++t) {
            auto [lo, hi] = config.length_bands[t % bands];
            if (lo <= config.subject_parts || hi < lo)
                throw std::invalid_argument("gen_world: length band must exceed subject token count");
            prompt_lengths[r].push_back(std::uniform_int_distribution<int>(lo, hi)(rng));
        }
    }

    TokenId next = 0;
    for (int k = 0; k < config.subject_parts; ++k) {
        world.subject_ranges.push_back({next, next + config.subject_pool});
        next += config.subject_pool;
    }
    for (int r = 0; r < config.relations; ++r) {
        int pool = 0;
        for (int len : prompt_lengths[r]) pool += len - config.subject_parts;
        world.template_ranges.push_back({next, next + pool});
        next += pool;
    }
    for (int r = 0; r < config.relations; ++r) {
        world.object_ranges.push_back({next, next + config.objects_per_relation * config.object_tokens});
        next += config.objects_per_relation * config.object_tokens;
    }
    world.query_token = next++;
    world.lamol_trigger = next++;
    world.vocab_size = next;
    if (config.vocab_size) {
        if (*config.vocab_size < next)
            throw std::invalid_argument("gen_world: configured vocab_size " + std::to_string(*config.vocab_size) +
                                        " too small for role ranges (need " + std::to_string(next) + ")");
        world.vocab_size = *config.vocab_size;
    }

    // Templates: each owns a distinct run of its relation's pool, with the
    // subject slots placed contiguously at a random offset.
    int template_id = 0;
    for (int r = 0; r < config.relations; ++r) {
        TokenId cursor = world.template_ranges[r].begin;
        for (int t = 0; t < config.templates_per_relation; ++t) {
            Template tpl;
            tpl.id = template_id++;
            tpl.relation = r;
            const int len = prompt_lengths[r][t];
            const int slot_at = std::uniform_int_distribution<int>(0, len - config.subject_parts)(rng);
            for (int pos = 0; pos < len; ++pos) {
                if (pos >= slot_at && pos < slot_at + config.subject_parts)
                    tpl.pattern.push_back(-(pos - slot_at) - 1);
                else
                    tpl.pattern.push_back(cursor++);
            }
            world.templates.push_back(std::move(tpl));
        }
    }

    // Individuals: distinct subject tuples, attributes drawn per relation.
    std::set<std::vector<TokenId>> used_tuples;
    for (int i = 0; i < total_individuals; ++i) {
        Individual ind;
        ind.id = i;
        do {
            ind.subject.clear();
            for (int k = 0; k < config.subject_parts; ++k) {
                TokenId t = world.subject_ranges[k].begin +
                            std::uniform_int_distribution<int>(0, config.subject_pool - 1)(rng);
                ind.subject.push_back(t);
            }
        } while (!used_tuples.insert(ind.subject).second);
        for (int r = 0; r < config.relations; ++r) {
            int value = std::uniform_int_distribution<int>(0, config.objects_per_relation - 1)(rng);
            std::vector<TokenId> object;
            for (int j = 0; j < config.object_tokens; ++j)
                object.push_back(world.object_ranges[r].begin + value * config.object_tokens + j);
            ind.attributes.push_back(std::move(object));
        }
        world.individuals.push_back(std::move(ind));
    }

    validate_world(world);
    return world;
}

void validate_world(const World& world) {
    std::vector<TokenRange> ranges;
    for (const auto& r : world.subject_ranges) ranges.push_back(r);
    for (const auto& r : world.template_ranges) ranges.push_back(r);
    for (const auto& r : world.object_ranges) ranges.push_back(r);
    ranges.push_back({world.query_token, world.query_token + 1});
    ranges.push_back({world.lamol_trigger, world.lamol_trigger + 1});
    auto sorted = ranges;
    std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a.begin < b.begin; });
    for (size_t i = 0; i + 1 < sorted.size(); ++i)
        if (sorted[i].end > sorted[i + 1].begin)
            throw std::runtime_error("world: overlapping role ranges");
    for (const auto& r : ranges)
        if (r.begin < 0 || r.end > world.vocab_size)
            throw std::runtime_error("world: role range outside vocabulary");
    for (const Individual& ind : world.individuals) {
        if (static_cast<int>(ind.subject.size()) != world.config.subject_parts)
            throw std::runtime_error("world: individual with wrong subject token count");
        if (static_cast<int>(ind.attributes.size()) != world.config.relations)
            throw std::runtime_error("world: individual with wrong attribute count");
    }
    for (const Template& tpl : world.templates) {
        std::vector<bool> slot_seen(static_cast<size_t>(world.config.subject_parts), false);
        for (int e : tpl.pattern) {
            if (e < 0) slot_seen[static_cast<size_t>(-e - 1)] = true;
            else if (!world.template_ranges[static_cast<size_t>(tpl.relation)].contains(e))
                throw std::runtime_error("world: template token outside its relation pool");
        }
        for (bool seen : slot_seen)
            if (!seen) throw std::runtime_error("world: template missing a subject slot");
    }
}

namespace {

Sample render_sentence(const World& world, const Individual& ind, const Template& tpl,
                       int bio_id, Split split, bool prepend_trigger) {
    Sample s;
    s.individual_id = ind.id;
    s.template_id = tpl.id;
    s.bio_id = bio_id;
    s.split = split;
    if (prepend_trigger) s.prompt.push_back(world.lamol_trigger);
    for (int e : tpl.pattern)
        s.prompt.push_back(e >= 0 ? e : ind.subject[static_cast<size_t>(-e - 1)]);
    s.prompt.push_back(world.query_token);
    s.object = ind.attributes[static_cast<size_t>(tpl.relation)];
    s.delta = count_occurrences(s.prompt);
    return s;
}

}  // namespace

RenderResult render_corpus(const World& world, const RenderOptions& opts, std::uint64_t seed) {
    if (opts.aug.kind == AugKind::PoissonAug && opts.aug.lambda <= 0)
        throw std::invalid_argument("render_corpus: Poisson lambda must be positive");
    if (opts.aug.kind == AugKind::KAug && opts.aug.k < 1)
        throw std::invalid_argument("render_corpus: k must be >= 1");
    if (opts.test_bios_per_individual < 1)
        throw std::invalid_argument("render_corpus: test bio count must be >= 1");

    Rng rng(seed);
    RenderResult result;
    const int relations = world.config.relations;

    for (const Individual& ind : world.individuals) {
        const Split train_split = world.is_pt_individual(ind.id) ? Split::PtTrain : Split::CptTrain;
        const Split test_split = world.is_pt_individual(ind.id) ? Split::PtTest : Split::CptTest;

        int n_train = 1;
        switch (opts.aug.kind) {
            case AugKind::OneAug: n_train = 1; break;
            case AugKind::KAug: n_train = opts.aug.k; break;
            case AugKind::PoissonAug:
                n_train = std::poisson_distribution<int>(opts.aug.lambda)(rng);
                break;
        }

        // Templates the individual's training bios used, per relation.
        std::vector<std::set<int>> used(static_cast<size_t>(relations));
        std::vector<int> relation_order(static_cast<size_t>(relations));
        std::iota(relation_order.begin(), relation_order.end(), 0);

        int bio_id = 0;
        for (int b = 0; b < n_train; ++b, ++bio_id) {
            std::shuffle(relation_order.begin(), relation_order.end(), rng);
            bool first_sentence = true;
            for (int r : relation_order) {
                auto ids = world.templates_for_relation(r);
                int tid = ids[std::uniform_int_distribution<size_t>(0, ids.size() - 1)(rng)];
                used[static_cast<size_t>(r)].insert(tid);
                result.samples.push_back(render_sentence(
                    world, ind, world.template_by_id(tid), bio_id, train_split,
                    opts.lamol_trigger_in_training && first_sentence));
                first_sentence = false;
            }
        }

        for (int b = 0; b < opts.test_bios_per_individual; ++b, ++bio_id) {
            std::shuffle(relation_order.begin(), relation_order.end(), rng);
            for (int r : relation_order) {
                auto ids = world.templates_for_relation(r);
                std::vector<int> unused;
                for (int tid : ids)
                    if (!used[static_cast<size_t>(r)].count(tid)) unused.push_back(tid);
                int tid;
                if (!unused.empty()) {
                    tid = unused[std::uniform_int_distribution<size_t>(0, unused.size() - 1)(rng)];
                } else {
                    result.template_fallback = true;
                    tid = ids[std::uniform_int_distribution<size_t>(0, ids.size() - 1)(rng)];
                }
                result.samples.push_back(
                    render_sentence(world, ind, world.template_by_id(tid), bio_id, test_split, false));
            }
        }
    }
    return result;
}

double CorpusStats::prob_o(TokenId o) const {
    auto it = pr_o.find(o);
    return it == pr_o.end() ? 0.0 : it->second;
}

double CorpusStats::prob_s_given_o(TokenId s, TokenId o) const {
    auto it = pr_s_given_o.find(o);
    if (it == pr_s_given_o.end()) return 0.0;
    auto jt = it->second.find(s);
    return jt == it->second.end() ? 0.0 : jt->second;
}

CorpusStats compute_stats(const std::vector<Sample>& training_samples) {
    if (training_samples.empty()) throw std::invalid_argument("compute_stats: empty training split");
    CorpusStats stats;
    std::unordered_map<TokenId, std::int64_t> object_counts;
    std::unordered_map<TokenId, std::unordered_map<TokenId, std::int64_t>> cooc;  // [o][s]
    std::unordered_map<TokenId, std::int64_t> occurrences_given_o;

    for (const Sample& s : training_samples) {
        const TokenId o = s.gold();
        object_counts[o]++;
        stats.sample_counts[split_name(s.split)]++;
        for (auto [token, count] : s.delta) {
            cooc[o][token] += count;
            occurrences_given_o[o] += count;
            for (int i = 0; i < count; ++i) stats.assoc_objects[token].push_back(o);
        }
    }
    stats.total_samples = static_cast<std::int64_t>(training_samples.size());
    for (auto [o, c] : object_counts)
        stats.pr_o[o] = static_cast<double>(c) / static_cast<double>(stats.total_samples);
    for (auto& [o, per_token] : cooc) {
        const double denom = static_cast<double>(occurrences_given_o[o]);
        for (auto [s, c] : per_token) stats.pr_s_given_o[o][s] = static_cast<double>(c) / denom;
    }
    return stats;
}

void write_samples(std::ostream& os, const std::vector<Sample>& samples) {
    for (const Sample& s : samples) {
        os << split_name(s.split) << '\t' << s.individual_id << '\t' << s.template_id << '\t';
        for (size_t i = 0; i < s.prompt.size(); ++i) os << (i ? " " : "") << s.prompt[i];
        os << '\t';
        for (size_t i = 0; i < s.object.size(); ++i) os << (i ? " " : "") << s.object[i];
        os << '\n';
    }
}

namespace {
std::vector<TokenId> parse_ids(const std::string& field) {
    std::vector<TokenId> out;
    std::istringstream iss(field);
    TokenId t;
    while (iss >> t) out.push_back(t);
    return out;
}
}  // namespace

std::vector<Sample> read_samples(std::istream& is) {
    std::vector<Sample> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string split_tag, ind, tpl, prompt, object;
        if (!std::getline(iss, split_tag, '\t') || !std::getline(iss, ind, '\t') ||
            !std::getline(iss, tpl, '\t') || !std::getline(iss, prompt, '\t') ||
            !std::getline(iss, object))
            throw std::runtime_error("read_samples: malformed line: " + line);
        Sample s;
        s.split = split_from_name(split_tag);
        s.individual_id = std::stoi(ind);
        s.template_id = std::stoi(tpl);
        s.prompt = parse_ids(prompt);
        s.object = parse_ids(object);
        s.delta = count_occurrences(s.prompt);
        out.push_back(std::move(s));
    }
    return out;
}

void save_samples(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    write_samples(os, samples);
}

std::vector<Sample> load_samples(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_samples(is);
}

namespace {
nlohmann::json range_to_json(const TokenRange& r) { return {{"begin", r.begin}, {"end", r.end}}; }
TokenRange range_from_json(const nlohmann::json& j) { return {j.at("begin"), j.at("end")}; }
}  // namespace

void save_world(const std::string& path, const World& world) {
    nlohmann::json j;
    j["vocab_size"] = world.vocab_size;
    j["pt_individuals"] = world.pt_individuals;
    j["query_token"] = world.query_token;
    j["lamol_trigger"] = world.lamol_trigger;
    nlohmann::json cfg;
    cfg["subject_parts"] = world.config.subject_parts;
    cfg["subject_pool"] = world.config.subject_pool;
    cfg["relations"] = world.config.relations;
    cfg["templates_per_relation"] = world.config.templates_per_relation;
    cfg["objects_per_relation"] = world.config.objects_per_relation;
    cfg["object_tokens"] = world.config.object_tokens;
    cfg["pt_individuals"] = world.config.pt_individuals;
    cfg["cpt_individuals"] = world.config.cpt_individuals;
    cfg["length_bands"] = world.config.length_bands;
    j["config"] = cfg;
    for (const auto& r : world.subject_ranges) j["subject_ranges"].push_back(range_to_json(r));
    for (const auto& r : world.template_ranges) j["template_ranges"].push_back(range_to_json(r));
    for (const auto& r : world.object_ranges) j["object_ranges"].push_back(range_to_json(r));
    for (const Template& t : world.templates)
        j["templates"].push_back({{"id", t.id}, {"relation", t.relation}, {"pattern", t.pattern}});
    for (const Individual& ind : world.individuals)
        j["individuals"].push_back({{"id", ind.id}, {"subject", ind.subject}, {"attributes", ind.attributes}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << j.dump(2) << '\n';
}

World load_world(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    is >> j;
    World world;
    world.vocab_size = j.at("vocab_size");
    world.pt_individuals = j.at("pt_individuals");
    world.query_token = j.at("query_token");
    world.lamol_trigger = j.at("lamol_trigger");
    const auto& cfg = j.at("config");
    world.config.subject_parts = cfg.at("subject_parts");
    world.config.subject_pool = cfg.at("subject_pool");
    world.config.relations = cfg.at("relations");
    world.config.templates_per_relation = cfg.at("templates_per_relation");
    world.config.objects_per_relation = cfg.at("objects_per_relation");
    world.config.object_tokens = cfg.at("object_tokens");
    world.config.pt_individuals = cfg.at("pt_individuals");
    world.config.cpt_individuals = cfg.at("cpt_individuals");
    world.config.length_bands = cfg.at("length_bands").get<std::vector<std::pair<int, int>>>();
    for (const auto& r : j.at("subject_ranges")) world.subject_ranges.push_back(range_from_json(r));
    for (const auto& r : j.at("template_ranges")) world.template_ranges.push_back(range_from_json(r));
    for (const auto& r : j.at("object_ranges")) world.object_ranges.push_back(range_from_json(r));
    for (const auto& t : j.at("templates")) {
        Template tpl;
        tpl.id = t.at("id");
        tpl.relation = t.at("relation");
        tpl.pattern = t.at("pattern").get<std::vector<int>>();
        world.templates.push_back(std::move(tpl));
    }
    for (const auto& i : j.at("individuals")) {
        Individual ind;
        ind.id = i.at("id");
        ind.subject = i.at("subject").get<std::vector<TokenId>>();
        ind.attributes = i.at("attributes").get<std::vector<std::vector<TokenId>>>();
        world.individuals.push_back(std::move(ind));
    }
    validate_world(world);
    return world;
}

std::vector<Sample> filter_split(const std::vector<Sample>& samples, Split split) {
    std::vector<Sample> out;
    for (const Sample& s : samples)
        if (s.split == split) out.push_back(s);
    return out;
}

}  // namespace fka
