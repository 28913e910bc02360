// Config-driven experiment runner: generates a synthetic biography corpus,
// pretrains the single-layer model, probes it, runs a continual-pretraining
// sweep over methods and mixing ratios, and emits plot-ready CSV reports.
// Every stage seeds its randomness from stage_seed(master, name), so reruns
// with the same config and seed reproduce all CSVs bit-exactly.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fka/continual.hpp"
#include "fka/corpus.hpp"
#include "fka/eval.hpp"
#include "fka/model.hpp"
#include "fka/rng.hpp"
#include "fka/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fka;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out = "artifacts";

    WorldConfig world;

    std::string aug = "k";
    int aug_k = 5;
    double aug_lambda = 5.0;
    int test_bios_per_individual = 1;
    bool lamol_trigger_in_training = false;

    std::string variant = "linear";
    double init_scale = 0.01;
    double z_offset = 0.0;
    double eta_y = 0.1;
    double eta_z = 0.01;

    long pt_steps = 300000;
    long pt_interval = 2000;
    std::string pt_gate = "hfta";
    double pt_threshold = 0.95;

    long cpt_steps = 600000;
    long cpt_interval = 2000;
    std::string cpt_gate = "hfta";
    double cpt_threshold = 0.90;
    std::vector<std::string> methods = {"naive",  "ewc",            "stored_replay",
                                        "stoc",   "random_snippet", "lamol"};
    std::vector<double> alphas = {0.5, 0.67, 0.8, 0.9};
    double ewc_k = 10.0;
    std::string stored_rule = "all_one_bio";
    int window_len = 1;
    int prompt_budget = 0;         // 0 = one prompt per CPT training sample
    long replay_token_budget = 20000;
    DecodeConfig decode;
    DedupConfig dedup;
    int threads = 0;               // 0 = hardware concurrency

    int histogram_bins = 20;
    double curve_ema = 0.8;
};

const std::vector<std::string> kSweepMethods = {"naive",  "ewc",            "stored_replay",
                                                "stoc",   "random_snippet", "lamol"};

bool is_replay_method(const std::string& m) {
    return m == "stored_replay" || m == "stoc" || m == "random_snippet" || m == "lamol";
}

std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string cell_name(const std::string& method, double alpha) {
    return method + "_a" + fmt_num(alpha);
}

// --- config parsing -----------------------------------------------------

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where,
                std::vector<std::string>& errs) {
    if (!j.is_object()) {
        errs.push_back(where + ": expected a JSON object");
        return;
    }
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            errs.push_back(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void read_field(const json& j, const char* key, T& into, const std::string& where,
                std::vector<std::string>& errs) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const json::exception&) {
        errs.push_back(where + "." + key + ": wrong type");
    }
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    std::vector<std::string> errs;
    check_keys(j, {"seed", "out", "world", "corpus", "model", "pretrain", "cpt", "probe",
                   "report"},
               "config", errs);

    read_field(j, "seed", c.seed, "config", errs);
    read_field(j, "out", c.out, "config", errs);

    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w,
                   {"subject_parts", "subject_pool", "relations", "templates_per_relation",
                    "objects_per_relation", "object_tokens", "pt_individuals", "cpt_individuals",
                    "length_bands", "vocab_size"},
                   "world", errs);
        read_field(w, "subject_parts", c.world.subject_parts, "world", errs);
        read_field(w, "subject_pool", c.world.subject_pool, "world", errs);
        read_field(w, "relations", c.world.relations, "world", errs);
        read_field(w, "templates_per_relation", c.world.templates_per_relation, "world", errs);
        read_field(w, "objects_per_relation", c.world.objects_per_relation, "world", errs);
        read_field(w, "object_tokens", c.world.object_tokens, "world", errs);
        read_field(w, "pt_individuals", c.world.pt_individuals, "world", errs);
        read_field(w, "cpt_individuals", c.world.cpt_individuals, "world", errs);
        read_field(w, "length_bands", c.world.length_bands, "world", errs);
        if (w.contains("vocab_size") && !w.at("vocab_size").is_null()) {
            int d = 0;
            read_field(w, "vocab_size", d, "world", errs);
            c.world.vocab_size = d;
        }
    }

    if (j.contains("corpus")) {
        const json& r = j.at("corpus");
        check_keys(r, {"aug", "k", "lambda", "test_bios_per_individual", "lamol_trigger_in_training"},
                   "corpus", errs);
        read_field(r, "aug", c.aug, "corpus", errs);
        read_field(r, "k", c.aug_k, "corpus", errs);
        read_field(r, "lambda", c.aug_lambda, "corpus", errs);
        read_field(r, "test_bios_per_individual", c.test_bios_per_individual, "corpus", errs);
        read_field(r, "lamol_trigger_in_training", c.lamol_trigger_in_training, "corpus", errs);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"variant", "init_scale", "z_offset", "eta_y", "eta_z"}, "model", errs);
        read_field(m, "variant", c.variant, "model", errs);
        read_field(m, "init_scale", c.init_scale, "model", errs);
        read_field(m, "z_offset", c.z_offset, "model", errs);
        read_field(m, "eta_y", c.eta_y, "model", errs);
        read_field(m, "eta_z", c.eta_z, "model", errs);
    }

    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        check_keys(p, {"steps", "eval_interval", "gate", "gate_threshold"}, "pretrain", errs);
        read_field(p, "steps", c.pt_steps, "pretrain", errs);
        read_field(p, "eval_interval", c.pt_interval, "pretrain", errs);
        read_field(p, "gate", c.pt_gate, "pretrain", errs);
        read_field(p, "gate_threshold", c.pt_threshold, "pretrain", errs);
    }

    if (j.contains("cpt")) {
        const json& p = j.at("cpt");
        check_keys(p,
                   {"steps", "eval_interval", "gate", "gate_threshold", "methods", "alphas",
                    "ewc_k", "stored_rule", "window_len", "prompt_budget", "replay_token_budget",
                    "decode", "dedup", "threads"},
                   "cpt", errs);
        read_field(p, "steps", c.cpt_steps, "cpt", errs);
        read_field(p, "eval_interval", c.cpt_interval, "cpt", errs);
        read_field(p, "gate", c.cpt_gate, "cpt", errs);
        read_field(p, "gate_threshold", c.cpt_threshold, "cpt", errs);
        read_field(p, "methods", c.methods, "cpt", errs);
        read_field(p, "alphas", c.alphas, "cpt", errs);
        read_field(p, "ewc_k", c.ewc_k, "cpt", errs);
        read_field(p, "stored_rule", c.stored_rule, "cpt", errs);
        read_field(p, "window_len", c.window_len, "cpt", errs);
        read_field(p, "prompt_budget", c.prompt_budget, "cpt", errs);
        read_field(p, "replay_token_budget", c.replay_token_budget, "cpt", errs);
        read_field(p, "threads", c.threads, "cpt", errs);
        if (p.contains("decode")) {
            const json& d = p.at("decode");
            check_keys(d, {"temperature", "top_p", "top_k", "repetition_penalty", "max_tokens",
                           "greedy"},
                       "cpt.decode", errs);
            read_field(d, "temperature", c.decode.temperature, "cpt.decode", errs);
            read_field(d, "top_p", c.decode.top_p, "cpt.decode", errs);
            read_field(d, "top_k", c.decode.top_k, "cpt.decode", errs);
            read_field(d, "repetition_penalty", c.decode.repetition_penalty, "cpt.decode", errs);
            read_field(d, "max_tokens", c.decode.max_tokens, "cpt.decode", errs);
            read_field(d, "greedy", c.decode.greedy, "cpt.decode", errs);
        }
        if (p.contains("dedup")) {
            const json& d = p.at("dedup");
            check_keys(d, {"shingle_len", "num_hashes", "threshold"}, "cpt.dedup", errs);
            read_field(d, "shingle_len", c.dedup.shingle_len, "cpt.dedup", errs);
            read_field(d, "num_hashes", c.dedup.num_hashes, "cpt.dedup", errs);
            read_field(d, "threshold", c.dedup.threshold, "cpt.dedup", errs);
        }
    }

    if (j.contains("probe")) {
        const json& p = j.at("probe");
        check_keys(p, {"histogram_bins"}, "probe", errs);
        read_field(p, "histogram_bins", c.histogram_bins, "probe", errs);
    }

    if (j.contains("report")) {
        const json& p = j.at("report");
        check_keys(p, {"curve_ema"}, "report", errs);
        read_field(p, "curve_ema", c.curve_ema, "report", errs);
    }

    if (!errs.empty()) {
        std::string msg = "invalid config:";
        for (const std::string& e : errs) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return c;
}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> errs;
    auto require = [&errs](bool ok, const std::string& msg) {
        if (!ok) errs.push_back(msg);
    };

    require(!c.out.empty(), "out: must not be empty");
    require(c.world.subject_parts >= 1, "world.subject_parts: must be >= 1");
    require(c.world.subject_pool >= 2, "world.subject_pool: must be >= 2");
    require(c.world.relations >= 1, "world.relations: must be >= 1");
    require(c.world.templates_per_relation >= 1, "world.templates_per_relation: must be >= 1");
    require(c.world.objects_per_relation >= 2, "world.objects_per_relation: must be >= 2");
    require(c.world.object_tokens >= 1, "world.object_tokens: must be >= 1");
    require(c.world.pt_individuals >= 1, "world.pt_individuals: must be >= 1");
    require(c.world.cpt_individuals >= 0, "world.cpt_individuals: must be >= 0");
    require(!c.world.length_bands.empty(), "world.length_bands: must not be empty");
    for (size_t i = 0; i < c.world.length_bands.size(); ++i) {
        auto [lo, hi] = c.world.length_bands[i];
        std::string tag = "world.length_bands[" + std::to_string(i) + "]";
        require(lo <= hi, tag + ": lower bound exceeds upper bound");
        require(lo > c.world.subject_parts, tag + ": band must exceed the subject token count");
    }

    require(c.aug == "one" || c.aug == "k" || c.aug == "poisson",
            "corpus.aug: must be one of \"one\", \"k\", \"poisson\"");
    require(c.aug_k >= 1, "corpus.k: must be >= 1");
    require(c.aug_lambda > 0, "corpus.lambda: must be > 0");
    require(c.test_bios_per_individual >= 1, "corpus.test_bios_per_individual: must be >= 1");

    try {
        variant_from_name(c.variant);
    } catch (const std::exception&) {
        errs.push_back("model.variant: unknown variant \"" + c.variant + "\"");
    }
    require(c.init_scale > 0, "model.init_scale: must be > 0");
    require(c.eta_y > 0, "model.eta_y: must be > 0");
    require(c.eta_z > 0, "model.eta_z: must be > 0");

    auto check_gate = [&](const std::string& gate, double thresh, const std::string& where) {
        require(gate == "fixed" || gate == "hfta" || gate == "sfta",
                where + ".gate: must be one of \"fixed\", \"hfta\", \"sfta\"");
        require(thresh > 0 && thresh <= 1, where + ".gate_threshold: must be in (0, 1]");
    };
    require(c.pt_steps > 0, "pretrain.steps: must be > 0");
    require(c.pt_interval > 0, "pretrain.eval_interval: must be > 0");
    check_gate(c.pt_gate, c.pt_threshold, "pretrain");
    require(c.cpt_steps > 0, "cpt.steps: must be > 0");
    require(c.cpt_interval > 0, "cpt.eval_interval: must be > 0");
    check_gate(c.cpt_gate, c.cpt_threshold, "cpt");

    require(!c.methods.empty(), "cpt.methods: must not be empty");
    bool any_replay = false;
    for (const std::string& m : c.methods) {
        if (std::find(kSweepMethods.begin(), kSweepMethods.end(), m) == kSweepMethods.end())
            errs.push_back("cpt.methods: unknown method \"" + m + "\"");
        else if (is_replay_method(m))
            any_replay = true;
        if (std::count(c.methods.begin(), c.methods.end(), m) > 1)
            errs.push_back("cpt.methods: duplicate method \"" + m + "\"");
    }
    require(!c.alphas.empty(), "cpt.alphas: must not be empty");
    for (double a : c.alphas) {
        require(a > 0 && a <= 1, "cpt.alphas: " + fmt_num(a) + " is outside (0, 1]");
        if (any_replay && a == 1.0)
            errs.push_back("cpt.alphas: alpha = 1 leaves no step budget for replay methods");
    }
    require(c.ewc_k >= 0, "cpt.ewc_k: must be >= 0");
    try {
        stored_rule_from_name(c.stored_rule);
    } catch (const std::exception&) {
        errs.push_back("cpt.stored_rule: unknown rule \"" + c.stored_rule + "\"");
    }
    require(c.window_len >= 1, "cpt.window_len: must be >= 1");
    require(c.prompt_budget >= 0, "cpt.prompt_budget: must be >= 0");
    require(c.replay_token_budget > 0, "cpt.replay_token_budget: must be > 0");
    require(c.decode.temperature > 0, "cpt.decode.temperature: must be > 0");
    require(c.decode.top_p > 0 && c.decode.top_p <= 1, "cpt.decode.top_p: must be in (0, 1]");
    require(c.decode.top_k == -1 || c.decode.top_k >= 1,
            "cpt.decode.top_k: must be -1 or a positive count");
    require(c.decode.repetition_penalty >= 1, "cpt.decode.repetition_penalty: must be >= 1");
    require(c.decode.max_tokens >= 1, "cpt.decode.max_tokens: must be >= 1");
    require(c.dedup.shingle_len >= 1, "cpt.dedup.shingle_len: must be >= 1");
    require(c.dedup.num_hashes >= 1, "cpt.dedup.num_hashes: must be >= 1");
    require(c.dedup.threshold > 0 && c.dedup.threshold <= 1,
            "cpt.dedup.threshold: must be in (0, 1]");
    require(c.threads >= 0, "cpt.threads: must be >= 0");
    require(c.histogram_bins >= 2, "probe.histogram_bins: must be >= 2");
    require(c.curve_ema >= 0 && c.curve_ema < 1, "report.curve_ema: must be in [0, 1)");
    if (c.world.cpt_individuals < 1)
        errs.push_back("world.cpt_individuals: continual phase requires at least one individual");
    return errs;
}

json resolved_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out"] = c.out;
    json w;
    w["subject_parts"] = c.world.subject_parts;
    w["subject_pool"] = c.world.subject_pool;
    w["relations"] = c.world.relations;
    w["templates_per_relation"] = c.world.templates_per_relation;
    w["objects_per_relation"] = c.world.objects_per_relation;
    w["object_tokens"] = c.world.object_tokens;
    w["pt_individuals"] = c.world.pt_individuals;
    w["cpt_individuals"] = c.world.cpt_individuals;
    w["length_bands"] = c.world.length_bands;
    if (c.world.vocab_size)
        w["vocab_size"] = *c.world.vocab_size;
    else
        w["vocab_size"] = nullptr;
    j["world"] = w;
    j["corpus"] = {{"aug", c.aug},
                   {"k", c.aug_k},
                   {"lambda", c.aug_lambda},
                   {"test_bios_per_individual", c.test_bios_per_individual},
                   {"lamol_trigger_in_training", c.lamol_trigger_in_training}};
    j["model"] = {{"variant", c.variant},
                  {"init_scale", c.init_scale},
                  {"z_offset", c.z_offset},
                  {"eta_y", c.eta_y},
                  {"eta_z", c.eta_z}};
    j["pretrain"] = {{"steps", c.pt_steps},
                     {"eval_interval", c.pt_interval},
                     {"gate", c.pt_gate},
                     {"gate_threshold", c.pt_threshold}};
    j["cpt"] = {{"steps", c.cpt_steps},
                {"eval_interval", c.cpt_interval},
                {"gate", c.cpt_gate},
                {"gate_threshold", c.cpt_threshold},
                {"methods", c.methods},
                {"alphas", c.alphas},
                {"ewc_k", c.ewc_k},
                {"stored_rule", c.stored_rule},
                {"window_len", c.window_len},
                {"prompt_budget", c.prompt_budget},
                {"replay_token_budget", c.replay_token_budget},
                {"decode",
                 {{"temperature", c.decode.temperature},
                  {"top_p", c.decode.top_p},
                  {"top_k", c.decode.top_k},
                  {"repetition_penalty", c.decode.repetition_penalty},
                  {"max_tokens", c.decode.max_tokens},
                  {"greedy", c.decode.greedy}}},
                {"dedup",
                 {{"shingle_len", c.dedup.shingle_len},
                  {"num_hashes", c.dedup.num_hashes},
                  {"threshold", c.dedup.threshold}}},
                {"threads", c.threads}};
    j["probe"] = {{"histogram_bins", c.histogram_bins}};
    j["report"] = {{"curve_ema", c.curve_ema}};
    return j;
}

// --- artifact plumbing ---------------------------------------------------

std::string path_join(const std::string& a, const std::string& b) {
    return (fs::path(a) / b).string();
}

void require_artifact(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("missing artifact: " + path);
}

std::ofstream open_out(const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os.precision(12);
    return os;
}

std::string timestamp() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::mutex g_log_mutex;

void log_line(const ExperimentConfig& c, const std::string& line) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    fs::create_directories(c.out);
    std::ofstream os(path_join(c.out, "run.log"), std::ios::app);
    os << timestamp() << " seed=" << c.seed << " " << line << "\n";
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
}

struct StageTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_resolved_config(const ExperimentConfig& c) {
    std::ofstream os = open_out(path_join(c.out, "resolved_config.json"));
    os << resolved_json(c).dump(2) << "\n";
}

StopRule make_gate(const std::string& gate, double threshold, long /*steps*/) {
    StopRule rule;
    if (gate == "hfta") {
        rule.kind = StopKind::ContinualHfta;
        rule.threshold = threshold;
    } else if (gate == "sfta") {
        rule.kind = StopKind::ContinualSfta;
        rule.threshold = threshold;
    } else {
        rule.kind = StopKind::FixedSteps;
    }
    return rule;
}

RenderOptions make_render_options(const ExperimentConfig& c) {
    RenderOptions opts;
    if (c.aug == "one")
        opts.aug = AugStrategy::one();
    else if (c.aug == "k")
        opts.aug = AugStrategy::k_aug(c.aug_k);
    else
        opts.aug = AugStrategy::poisson(c.aug_lambda);
    opts.test_bios_per_individual = c.test_bios_per_individual;
    opts.lamol_trigger_in_training = c.lamol_trigger_in_training;
    return opts;
}

struct Cell {
    std::string name;
    std::string method;
    double alpha = 1.0;
};

std::vector<Cell> sweep_cells(const ExperimentConfig& c, const std::string& only) {
    std::vector<Cell> cells;
    for (const std::string& m : c.methods)
        for (double a : c.alphas) cells.push_back({cell_name(m, a), m, a});
    if (only.empty()) return cells;
    for (const Cell& cell : cells)
        if (cell.name == only) return {cell};
    throw ConfigError("unknown sweep cell \"" + only + "\" (expected e.g. \"" + cells.front().name +
                      "\")");
}

// --- shared loading ------------------------------------------------------

struct Loaded {
    World world;
    std::vector<Sample> pt_train, pt_test, cpt_train, cpt_test;
};

Loaded load_corpus_artifacts(const ExperimentConfig& c) {
    std::string world_path = path_join(c.out, "world.json");
    std::string samples_path = path_join(c.out, "samples.tsv");
    require_artifact(world_path);
    require_artifact(samples_path);
    Loaded l;
    l.world = load_world(world_path);
    std::vector<Sample> all = load_samples(samples_path);
    l.pt_train = filter_split(all, Split::PtTrain);
    l.pt_test = filter_split(all, Split::PtTest);
    l.cpt_train = filter_split(all, Split::CptTrain);
    l.cpt_test = filter_split(all, Split::CptTest);
    return l;
}

ModelParams load_pretrained(const ExperimentConfig& c) {
    std::string path = path_join(c.out, "pretrained.bin");
    require_artifact(path);
    return load_params(path);
}

// --- stages --------------------------------------------------------------

void stage_gen_data(const ExperimentConfig& c) {
    StageTimer timer;
    World world = gen_world(c.world, stage_seed(c.seed, "world"));
    RenderResult rendered = render_corpus(world, make_render_options(c), stage_seed(c.seed, "render"));
    save_world(path_join(c.out, "world.json"), world);
    save_samples(path_join(c.out, "samples.tsv"), rendered.samples);
    std::map<std::string, long> per_split;
    for (const Sample& s : rendered.samples) ++per_split[split_name(s.split)];
    std::ostringstream counts;
    for (const auto& [tag, n] : per_split) counts << " " << tag << "=" << n;
    log_line(c, "gen-data: vocab=" + std::to_string(world.vocab_size) + " samples=" +
                    std::to_string(rendered.samples.size()) + counts.str() + " elapsed=" +
                    fmt_num(timer.seconds()) + "s");
}

void stage_pretrain(const ExperimentConfig& c) {
    StageTimer timer;
    Loaded l = load_corpus_artifacts(c);
    ModelParams params = init_params(l.world.vocab_size, c.init_scale,
                                     variant_from_name(c.variant), stage_seed(c.seed, "init"));
    // A positive common start keeps no token stranded at the z = 0 saddle
    // when the attention rate is much slower than the logit rate.
    params.z.array() += c.z_offset;
    TrainConfig cfg;
    cfg.eta_y = c.eta_y;
    cfg.eta_z = c.eta_z;
    cfg.steps = c.pt_steps;
    EvalHooks hooks;
    hooks.interval = c.pt_interval;
    hooks.continual_eval = l.pt_test;
    StopRule gate = make_gate(c.pt_gate, c.pt_threshold, c.pt_steps);
    Trajectory traj = train_phase(params, l.pt_train, cfg, hooks, gate, stage_seed(c.seed, "pretrain"));
    save_params(path_join(c.out, "pretrained.bin"), params);
    write_trajectory_csv(path_join(c.out, "pt_trajectory.csv"), traj);
    MetricRecord final = evaluate(params, l.pt_test);
    log_line(c, "pretrain: steps=" + std::to_string(traj.steps_run) +
                    (traj.stopped_by_gate ? " (gated)" : "") + " pt_test_hfta=" + fmt_num(final.hfta) +
                    " elapsed=" + fmt_num(timer.seconds()) + "s");
}

void stage_probe(const ExperimentConfig& c) {
    StageTimer timer;
    Loaded l = load_corpus_artifacts(c);
    ModelParams params = load_pretrained(c);
    CorpusStats stats = compute_stats(l.pt_train);
    double length_norm = 0;
    for (const Sample& s : l.pt_train) length_norm += static_cast<double>(s.prompt.size());
    length_norm /= static_cast<double>(l.pt_train.size());

    CorrelationReport rep =
        correlation_report(params, stats, c.eta_z / c.eta_y, length_norm, &l.world);
    {
        std::ofstream os = open_out(path_join(c.out, "probes/di_scatter.csv"));
        os << "token,role,di,attention\n";
        for (const DiversityRecord& r : rep.records)
            os << r.token << ',' << r.role << ',' << r.di << ',' << r.attention << '\n';
    }
    {
        std::ofstream os = open_out(path_join(c.out, "probes/di_correlation.csv"));
        os << "pearson,spearman\n" << rep.pearson << ',' << rep.spearman << '\n';
    }

    PlateauKl kl = plateau_kl(params, l.pt_test, c.histogram_bins);
    {
        std::ofstream os = open_out(path_join(c.out, "probes/plateau_template_kl.csv"));
        os << "template_id,mean_kl\n";
        for (const auto& [id, v] : kl.per_template_mean_kl) os << id << ',' << v << '\n';
    }
    {
        std::ofstream os = open_out(path_join(c.out, "probes/plateau_histogram.csv"));
        os << "bin_lower,count\n";
        for (const auto& [edge, count] : kl.histogram) os << edge << ',' << count << '\n';
    }
    log_line(c, "probe: di_pearson=" + fmt_num(rep.pearson) + " di_spearman=" +
                    fmt_num(rep.spearman) + " mean_template_kl=" + fmt_num(kl.mean_kl) +
                    " elapsed=" + fmt_num(timer.seconds()) + "s");
}

ReplayCorpus build_replay(const ExperimentConfig& c, const std::string& method, const Loaded& l,
                          const ModelParams& pretrained) {
    if (method == "stored_replay")
        return build_stored_replay(l.pt_train, stored_rule_from_name(c.stored_rule),
                                   stage_seed(c.seed, "replay:stored"));
    PromptMode mode = prompt_mode_from_name(method);
    int budget = c.prompt_budget > 0 ? c.prompt_budget : static_cast<int>(l.cpt_train.size());
    PromptSelection sel =
        select_prompts(mode, pretrained, l.cpt_train, l.world.lamol_trigger, c.window_len, budget,
                       stage_seed(c.seed, "replay:prompts:" + method));
    std::vector<ReplaySample> generated =
        generate_replay(pretrained, sel.prompts, l.world.query_token, c.decode,
                        c.replay_token_budget, stage_seed(c.seed, "replay:gen:" + method));
    return dedup_replay(std::move(generated), c.dedup, stage_seed(c.seed, "replay:dedup:" + method));
}

void stage_replay_gen(const ExperimentConfig& c) {
    StageTimer timer;
    Loaded l = load_corpus_artifacts(c);
    ModelParams pretrained = load_pretrained(c);
    int built = 0;
    for (const std::string& m : c.methods) {
        if (!is_replay_method(m)) continue;
        ReplayCorpus corpus = build_replay(c, m, l, pretrained);
        fs::create_directories(path_join(c.out, "replay"));
        save_replay(path_join(c.out, "replay/" + m + ".tsv"), corpus);
        log_line(c, "replay-gen: " + m + " samples=" + std::to_string(corpus.samples.size()) +
                        " tokens=" + std::to_string(corpus.token_count) + " dropped=" +
                        std::to_string(corpus.dropped_duplicates));
        ++built;
    }
    log_line(c, "replay-gen: corpora=" + std::to_string(built) + " elapsed=" +
                    fmt_num(timer.seconds()) + "s");
}

void write_metrics_csv(const std::string& path, const ModelParams& params,
                       const std::vector<Sample>& pt_test, const std::vector<Sample>& cpt_test) {
    MetricRecord original = evaluate(params, pt_test);
    MetricRecord continual = evaluate(params, cpt_test);
    std::ofstream os = open_out(path);
    os << "split,hfta,sfta,em,sample_count\n";
    os << "pt_test," << original.hfta << ',' << original.sfta << ',' << original.em << ','
       << original.sample_count << '\n';
    os << "cpt_test," << continual.hfta << ',' << continual.sfta << ',' << continual.em << ','
       << continual.sample_count << '\n';
}

void stage_cpt(const ExperimentConfig& c, const std::string& only_cell) {
    StageTimer timer;
    Loaded l = load_corpus_artifacts(c);
    ModelParams pretrained = load_pretrained(c);
    std::vector<Cell> cells = sweep_cells(c, only_cell);

    bool wants_ewc = false;
    std::map<std::string, ReplayCorpus> replays;
    for (const Cell& cell : cells) {
        if (cell.method == "ewc") wants_ewc = true;
        if (is_replay_method(cell.method) && !replays.count(cell.method)) {
            std::string path = path_join(c.out, "replay/" + cell.method + ".tsv");
            replays[cell.method] =
                fs::exists(path) ? load_replay(path) : build_replay(c, cell.method, l, pretrained);
        }
    }
    Eigen::MatrixXd fisher;
    if (wants_ewc) fisher = fisher_importance(pretrained, l.pt_train);

    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
            const Cell& cell = cells[i];
            try {
                ModelParams params = pretrained;
                ContinualMethod method;
                if (cell.method == "stored_replay") {
                    method.tag = MethodTag::StoredReplay;
                    method.stored_rule = stored_rule_from_name(c.stored_rule);
                } else if (is_replay_method(cell.method)) {
                    method.tag = MethodTag::GenerativeReplay;
                    method.prompt_mode = prompt_mode_from_name(cell.method);
                } else {
                    method.tag = cell.method == "ewc" ? MethodTag::EWC : MethodTag::Naive;
                }
                // Naive and EWC take the full update; alpha only splits the
                // step budget when a replay stream exists.
                method.alpha = is_replay_method(cell.method) ? cell.alpha : 1.0;
                method.ewc_k = c.ewc_k;
                method.window_len = c.window_len;
                method.decode_config = c.decode;
                method.dedup_config = c.dedup;

                TrainConfig cfg;
                cfg.eta_y = c.eta_y;
                cfg.eta_z = c.eta_z;
                cfg.steps = c.cpt_steps;
                if (method.tag == MethodTag::EWC) {
                    Regularizer reg;
                    reg.k = c.ewc_k;
                    reg.importance = fisher;
                    reg.reference = pretrained.Y;
                    cfg.regularizer = reg;
                }
                EvalHooks hooks;
                hooks.interval = c.cpt_interval;
                hooks.original_eval = l.pt_test;
                hooks.continual_eval = l.cpt_test;
                StopRule gate = make_gate(c.cpt_gate, c.cpt_threshold, c.cpt_steps);
                const ReplayCorpus* replay =
                    is_replay_method(cell.method) ? &replays.at(cell.method) : nullptr;
                Trajectory traj = run_cpt(params, l.cpt_train, replay, method, cfg, hooks, gate,
                                          stage_seed(c.seed, "cpt:" + cell.name));

                std::string dir = path_join(c.out, "cells/" + cell.name);
                fs::create_directories(dir);
                write_trajectory_csv(path_join(dir, "trajectory.csv"), traj);
                save_params(path_join(dir, "final.bin"), params);
                write_metrics_csv(path_join(dir, "metrics.csv"), params, l.pt_test, l.cpt_test);
                {
                    std::ofstream os = open_out(path_join(dir, "train_summary.csv"));
                    os << "steps_run,stopped_by_gate\n"
                       << traj.steps_run << ',' << (traj.stopped_by_gate ? 1 : 0) << '\n';
                }
                log_line(c, "cpt: cell=" + cell.name + " steps=" + std::to_string(traj.steps_run) +
                                (traj.stopped_by_gate ? " (gated)" : ""));
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };

    unsigned n_threads = c.threads > 0 ? static_cast<unsigned>(c.threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    log_line(c, "cpt: cells=" + std::to_string(cells.size()) + " elapsed=" +
                    fmt_num(timer.seconds()) + "s");
}

void stage_eval(const ExperimentConfig& c, const std::string& only_cell) {
    StageTimer timer;
    Loaded l = load_corpus_artifacts(c);
    for (const Cell& cell : sweep_cells(c, only_cell)) {
        std::string dir = path_join(c.out, "cells/" + cell.name);
        std::string params_path = path_join(dir, "final.bin");
        require_artifact(params_path);
        write_metrics_csv(path_join(dir, "metrics.csv"), load_params(params_path), l.pt_test,
                          l.cpt_test);
    }
    log_line(c, "eval: refreshed metrics, elapsed=" + fmt_num(timer.seconds()) + "s");
}

// --- report --------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    require_artifact(path);
    std::ifstream is(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) row.push_back(field);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("empty csv: " + path);
    return rows;
}

size_t csv_column(const std::vector<std::vector<std::string>>& rows, const std::string& name) {
    const auto& header = rows.front();
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::runtime_error("csv column not found: " + name);
}

struct CellMetrics {
    double original_hfta = 0, original_sfta = 0, original_em = 0;
    double continual_hfta = 0, continual_sfta = 0, continual_em = 0;
};

CellMetrics read_cell_metrics(const std::string& path) {
    auto rows = read_csv(path);
    size_t hfta = csv_column(rows, "hfta"), sfta = csv_column(rows, "sfta"),
           em = csv_column(rows, "em");
    CellMetrics m;
    bool saw_pt = false, saw_cpt = false;
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r[0] == "pt_test") {
            m.original_hfta = std::stod(r[hfta]);
            m.original_sfta = std::stod(r[sfta]);
            m.original_em = std::stod(r[em]);
            saw_pt = true;
        } else if (r[0] == "cpt_test") {
            m.continual_hfta = std::stod(r[hfta]);
            m.continual_sfta = std::stod(r[sfta]);
            m.continual_em = std::stod(r[em]);
            saw_cpt = true;
        }
    }
    if (!saw_pt || !saw_cpt) throw std::runtime_error("incomplete metrics csv: " + path);
    return m;
}

void stage_report(const ExperimentConfig& c) {
    StageTimer timer;
    std::vector<Cell> cells = sweep_cells(c, "");
    std::map<std::string, CellMetrics> metrics;
    std::ostringstream summary;

    // Method x alpha grid from the per-cell metric CSVs.
    {
        std::ofstream os = open_out(path_join(c.out, "report/method_alpha_grid.csv"));
        os << "method,alpha,original_hfta,original_sfta,original_em,continual_hfta,"
              "continual_sfta,continual_em\n";
        for (const Cell& cell : cells) {
            CellMetrics m = read_cell_metrics(path_join(c.out, "cells/" + cell.name + "/metrics.csv"));
            metrics[cell.name] = m;
            os << cell.method << ',' << fmt_num(cell.alpha) << ',' << m.original_hfta << ','
               << m.original_sfta << ',' << m.original_em << ',' << m.continual_hfta << ','
               << m.continual_sfta << ',' << m.continual_em << '\n';
        }
    }

    // Smoothed learning/forgetting curves per cell, plus the pretraining curve.
    auto smooth_trajectory = [&](const std::string& src, const std::string& dst) {
        auto rows = read_csv(src);
        size_t step = csv_column(rows, "step"), loss = csv_column(rows, "loss"),
               ohfta = csv_column(rows, "original_hfta"), chfta = csv_column(rows, "continual_hfta");
        std::vector<double> losses, originals, continuals;
        for (size_t i = 1; i < rows.size(); ++i) {
            losses.push_back(std::stod(rows[i][loss]));
            originals.push_back(std::stod(rows[i][ohfta]));
            continuals.push_back(std::stod(rows[i][chfta]));
        }
        std::vector<double> s_loss = smooth_curve(losses, c.curve_ema);
        std::vector<double> s_orig = smooth_curve(originals, c.curve_ema);
        std::vector<double> s_cont = smooth_curve(continuals, c.curve_ema);
        std::ofstream os = open_out(dst);
        os << "step,loss,original_hfta,continual_hfta\n";
        for (size_t i = 0; i < s_loss.size(); ++i)
            os << rows[i + 1][step] << ',' << s_loss[i] << ',' << s_orig[i] << ',' << s_cont[i]
               << '\n';
    };
    smooth_trajectory(path_join(c.out, "pt_trajectory.csv"),
                      path_join(c.out, "report/curves/pretrain.csv"));
    for (const Cell& cell : cells)
        smooth_trajectory(path_join(c.out, "cells/" + cell.name + "/trajectory.csv"),
                          path_join(c.out, "report/curves/" + cell.name + ".csv"));

    // DI scatter, re-emitted with correlations recomputed from the raw CSV.
    std::string scatter_path = path_join(c.out, "probes/di_scatter.csv");
    if (fs::exists(scatter_path)) {
        auto rows = read_csv(scatter_path);
        size_t di = csv_column(rows, "di"), attn = csv_column(rows, "attention");
        std::vector<double> dis, attns;
        for (size_t i = 1; i < rows.size(); ++i) {
            dis.push_back(std::stod(rows[i][di]));
            attns.push_back(std::stod(rows[i][attn]));
        }
        fs::create_directories(path_join(c.out, "report"));
        fs::copy_file(scatter_path, path_join(c.out, "report/di_scatter.csv"),
                      fs::copy_options::overwrite_existing);
        double pearson = pearson_correlation(attns, dis);
        double spearman = spearman_correlation(attns, dis);
        bool ok = pearson <= -0.8 && spearman <= -0.8;
        summary << (ok ? "PASS" : "FAIL") << " diversity-attention anticorrelation <= -0.8"
                << " (pearson=" << fmt_num(pearson) << " spearman=" << fmt_num(spearman) << ")\n";
    } else {
        summary << "SKIP diversity-attention anticorrelation (no probes/di_scatter.csv)\n";
    }

    // Naive forgetting: original knowledge at the end of CPT below 25% of its
    // value at CPT entry, read off the naive trajectory.
    auto has_method = [&](const std::string& m) {
        return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
    };
    auto original_curve = [&](const std::string& cell) {
        auto rows = read_csv(path_join(c.out, "cells/" + cell + "/trajectory.csv"));
        size_t col = csv_column(rows, "original_hfta");
        std::vector<double> curve;
        for (size_t i = 1; i < rows.size(); ++i) curve.push_back(std::stod(rows[i][col]));
        return curve;
    };
    auto curve_auc = [](const std::vector<double>& curve) {
        double auc = 0;
        for (size_t i = 1; i < curve.size(); ++i) auc += 0.5 * (curve[i - 1] + curve[i]);
        return curve.size() > 1 ? auc / static_cast<double>(curve.size() - 1) : 0.0;
    };
    if (has_method("naive")) {
        std::string cell = cell_name("naive", c.alphas.front());
        std::vector<double> curve = original_curve(cell);
        double start = curve.front(), end = curve.back();
        bool ok = !curve.empty() && end < 0.25 * start;
        summary << (ok ? "PASS" : "FAIL")
                << " naive forgetting: final original hfta below 25% of the entry value"
                << " (start=" << fmt_num(start) << " end=" << fmt_num(end) << ")\n";
        if (has_method("ewc")) {
            double naive_auc = curve_auc(curve);
            double ewc_auc = curve_auc(original_curve(cell_name("ewc", c.alphas.front())));
            bool slower = ewc_auc > naive_auc;
            summary << (slower ? "PASS" : "FAIL")
                    << " regularization slows forgetting: ewc original-hfta area above naive"
                    << " (ewc=" << fmt_num(ewc_auc) << " naive=" << fmt_num(naive_auc) << ")\n";
        }
    }

    // Replay ordering per alpha from the grid.
    if (has_method("stored_replay") && has_method("stoc") && has_method("random_snippet") &&
        has_method("lamol")) {
        for (double a : c.alphas) {
            double stored = metrics.at(cell_name("stored_replay", a)).original_hfta;
            double stoc = metrics.at(cell_name("stoc", a)).original_hfta;
            double random = metrics.at(cell_name("random_snippet", a)).original_hfta;
            double lamol = metrics.at(cell_name("lamol", a)).original_hfta;
            bool ok = stored >= stoc && stoc > random && stoc > lamol;
            summary << (ok ? "PASS" : "FAIL") << " replay ordering at alpha=" << fmt_num(a)
                    << ": stored >= stoc > {random, lamol}"
                    << " (stored=" << fmt_num(stored) << " stoc=" << fmt_num(stoc)
                    << " random=" << fmt_num(random) << " lamol=" << fmt_num(lamol) << ")\n";
        }
    }

    {
        std::ofstream os = open_out(path_join(c.out, "report/summary.txt"));
        os << summary.str();
    }
    log_line(c, "report: cells=" + std::to_string(cells.size()) + " elapsed=" +
                    fmt_num(timer.seconds()) + "s");
}

void stage_run(const ExperimentConfig& c, const std::string& only_cell) {
    StageTimer timer;
    std::string marker = path_join(c.out, "incomplete_run");
    {
        std::ofstream os = open_out(marker);
        os << "run in progress, started " << timestamp() << "\n";
    }
    try {
        stage_gen_data(c);
        stage_pretrain(c);
        stage_probe(c);
        stage_replay_gen(c);
        stage_cpt(c, only_cell);
        stage_eval(c, only_cell);
        if (only_cell.empty()) stage_report(c);
    } catch (const std::exception& e) {
        std::ofstream os = open_out(marker);
        os << "run failed: " << e.what() << "\n";
        throw;
    }
    fs::remove(marker);
    log_line(c, "run: complete, elapsed=" + fmt_num(timer.seconds()) + "s");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-layer transformer continual knowledge acquisition experiments"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_override;
    std::string cell;
    std::uint64_t seed_override = 0;
    CLI::Option* seed_opt =
        app.add_option("--seed", seed_override, "Master seed, overrides the config");
    app.add_option("--config", config_path, "Experiment config JSON")->required();
    app.add_option("--out", out_override, "Artifact directory, overrides the config");
    app.add_option("--cell", cell, "Restrict cpt/eval/run to one sweep cell, e.g. stoc_a0.8");

    std::vector<std::string> commands = {"gen-data", "pretrain",   "probe", "replay-gen",
                                         "cpt",      "eval",       "report", "run"};
    std::map<std::string, CLI::App*> subs;
    for (const std::string& name : commands) subs[name] = app.add_subcommand(name);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::string command;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) command = name;

    try {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config: " + config_path);
        json parsed;
        try {
            parsed = json::parse(is);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        ExperimentConfig config = parse_config(parsed);
        if (seed_opt->count() > 0) config.seed = seed_override;
        if (!out_override.empty()) config.out = out_override;
        std::vector<std::string> violations = validate_config(config);
        if (!violations.empty()) {
            std::fprintf(stderr, "invalid config:\n");
            for (const std::string& v : violations) std::fprintf(stderr, "  %s\n", v.c_str());
            return 1;
        }
        if (!cell.empty()) sweep_cells(config, cell);  // reject unknown cells before any work

        fs::create_directories(config.out);
        write_resolved_config(config);

        if (command == "gen-data")
            stage_gen_data(config);
        else if (command == "pretrain")
            stage_pretrain(config);
        else if (command == "probe")
            stage_probe(config);
        else if (command == "replay-gen")
            stage_replay_gen(config);
        else if (command == "cpt")
            stage_cpt(config, cell);
        else if (command == "eval")
            stage_eval(config, cell);
        else if (command == "report")
            stage_report(config);
        else
            stage_run(config, cell);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
