#include "fka/continual.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fka/minhash.hpp"
#include "fka/rng.hpp"
#include "fka/theory.hpp"

namespace fka {

const char* method_name(MethodTag tag) {
    switch (tag) {
        case MethodTag::Naive: return "naive";
        case MethodTag::EWC: return "ewc";
        case MethodTag::StoredReplay: return "stored_replay";
        case MethodTag::GenerativeReplay: return "generative_replay";
    }
    return "?";
}

const char* stored_rule_name(StoredRule rule) {
    return rule == StoredRule::AllOneBio ? "all_one_bio" : "half_two_bios";
}

const char* prompt_mode_name(PromptMode mode) {
    switch (mode) {
        case PromptMode::LAMOL: return "lamol";
        case PromptMode::STOC: return "stoc";
        case PromptMode::RandomSnippet: return "random_snippet";
    }
    return "?";
}

MethodTag method_from_name(const std::string& name) {
    for (MethodTag t : {MethodTag::Naive, MethodTag::EWC, MethodTag::StoredReplay,
                        MethodTag::GenerativeReplay})
        if (name == method_name(t)) return t;
    throw std::invalid_argument("unknown method: " + name);
}

StoredRule stored_rule_from_name(const std::string& name) {
    for (StoredRule r : {StoredRule::AllOneBio, StoredRule::HalfTwoBios})
        if (name == stored_rule_name(r)) return r;
    throw std::invalid_argument("unknown stored rule: " + name);
}

PromptMode prompt_mode_from_name(const std::string& name) {
    for (PromptMode m : {PromptMode::LAMOL, PromptMode::STOC, PromptMode::RandomSnippet})
        if (name == prompt_mode_name(m)) return m;
    throw std::invalid_argument("unknown prompt mode: " + name);
}

void ContinualMethod::validate() const {
    if (alpha <= 0 || alpha > 1) throw std::invalid_argument("method: alpha must be in (0, 1]");
    if (ewc_k < 0) throw std::invalid_argument("method: ewc coefficient must be >= 0");
    if (window_len < 1) throw std::invalid_argument("method: window_len must be >= 1");
}

Eigen::MatrixXd fisher_importance(const ModelParams& params, const std::vector<Sample>& pt_samples) {
    if (pt_samples.empty()) throw std::invalid_argument("fisher_importance: empty sample set");
    const int d = params.vocab_size();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
    for (const Sample& s : pt_samples) {
        const SampleGradient grad = loss_gradient(params, s);
        for (const auto& [token, g] : grad.grad_y) w.col(token) += g.cwiseAbs2();
    }
    w /= static_cast<double>(pt_samples.size());
    return w;
}

namespace {

long token_count_of(const Sample& s) {
    return static_cast<long>(s.prompt.size() + s.object.size());
}

}  // namespace

ReplayCorpus build_stored_replay(const std::vector<Sample>& pt_training, StoredRule rule,
                                 std::uint64_t seed) {
    // Group sentences by (individual, biography).
    std::map<int, std::map<int, std::vector<const Sample*>>> bios;
    for (const Sample& s : pt_training) bios[s.individual_id][s.bio_id].push_back(&s);

    Rng rng(seed);
    ReplayCorpus corpus;
    auto retain_bio = [&](const std::vector<const Sample*>& bio) {
        for (const Sample* s : bio) {
            ReplaySample r;
            r.sample = *s;
            r.provenance = "stored";
            corpus.samples.push_back(std::move(r));
            corpus.token_count += token_count_of(*s);
        }
    };

    if (rule == StoredRule::AllOneBio) {
        for (auto& [ind, per_bio] : bios) {
            if (per_bio.empty()) {
                corpus.skipped_individuals++;
                continue;
            }
            std::vector<int> bio_ids;
            for (auto& [bid, _] : per_bio) bio_ids.push_back(bid);
            int pick = bio_ids[std::uniform_int_distribution<size_t>(0, bio_ids.size() - 1)(rng)];
            retain_bio(per_bio[pick]);
        }
    } else {
        std::vector<int> individuals;
        for (auto& [ind, _] : bios) individuals.push_back(ind);
        std::shuffle(individuals.begin(), individuals.end(), rng);
        const size_t half = individuals.size() / 2;
        for (size_t i = 0; i < half; ++i) {
            auto& per_bio = bios[individuals[i]];
            std::vector<int> bio_ids;
            for (auto& [bid, _] : per_bio) bio_ids.push_back(bid);
            std::shuffle(bio_ids.begin(), bio_ids.end(), rng);
            for (size_t b = 0; b < std::min<size_t>(2, bio_ids.size()); ++b)
                retain_bio(per_bio[bio_ids[b]]);
        }
    }
    return corpus;
}

PromptSelection select_prompts(PromptMode mode, const ModelParams& pretrained,
                               const std::vector<Sample>& cpt_samples, TokenId lamol_trigger,
                               int window_len, int budget, std::uint64_t seed) {
    if (window_len < 1) throw std::invalid_argument("select_prompts: window_len must be >= 1");
    if (budget < 1) throw std::invalid_argument("select_prompts: budget must be >= 1");

    PromptSelection out;
    if (mode == PromptMode::LAMOL) {
        out.prompts.assign(static_cast<size_t>(budget), {lamol_trigger});
        return out;
    }
    if (cpt_samples.empty()) throw std::invalid_argument("select_prompts: no CPT samples");

    Rng rng(seed);
    struct Window {
        std::vector<TokenId> tokens;
        double priority;
        size_t sample_index;
    };
    std::vector<Window> windows;

    for (size_t i = 0; i < cpt_samples.size(); ++i) {
        const Sample& s = cpt_samples[i];
        // Slide over the prompt without its trailing query token.
        const int positions = static_cast<int>(s.prompt.size()) - 1;
        if (positions < 1) continue;
        int len = window_len;
        if (len > positions) {
            len = positions;
            out.window_clamped = true;
        }
        if (mode == PromptMode::STOC) {
            const Prediction pred = forward(pretrained, s.prompt);
            int best_start = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (int start = 0; start + len <= positions; ++start) {
                double score = 0;
                // Magnitude, not raw weight: under linear attention the sign
                // of (z_s, y_s) is a gauge choice, so a strongly negative
                // score marks an informative token just as a positive one
                // does. Exponential and softmax weights are positive anyway.
                for (int p = start; p < start + len; ++p) score += std::abs(pred.attention(p));
                if (score > best_score) {  // ties keep the earliest window
                    best_score = score;
                    best_start = start;
                }
            }
            windows.push_back({{s.prompt.begin() + best_start, s.prompt.begin() + best_start + len},
                               best_score,
                               i});
        } else {  // RandomSnippet
            const int start = std::uniform_int_distribution<int>(0, positions - len)(rng);
            windows.push_back({{s.prompt.begin() + start, s.prompt.begin() + start + len},
                               std::uniform_real_distribution<double>(0, 1)(rng),
                               i});
        }
    }

    std::stable_sort(windows.begin(), windows.end(),
                     [](const Window& a, const Window& b) { return a.priority > b.priority; });
    const size_t keep = std::min<size_t>(static_cast<size_t>(budget), windows.size());
    for (size_t i = 0; i < keep; ++i) out.prompts.push_back(std::move(windows[i].tokens));
    return out;
}

std::vector<ReplaySample> generate_replay(const ModelParams& pretrained,
                                          const std::vector<std::vector<TokenId>>& prompts,
                                          TokenId query_token, const DecodeConfig& decode_config,
                                          long target_tokens, std::uint64_t seed) {
    if (prompts.empty()) throw std::invalid_argument("generate_replay: no prompts");
    std::vector<ReplaySample> out;
    long generated = 0;
    size_t index = 0;
    std::uint64_t draw = 0;
    while (generated < target_tokens) {
        const std::vector<TokenId>& snippet = prompts[index % prompts.size()];
        index++;
        std::vector<TokenId> prompt = snippet;
        prompt.push_back(query_token);
        std::vector<TokenId> object =
            decode(pretrained, prompt, decode_config, stage_seed(seed, std::to_string(draw++)));
        if (object.empty()) continue;
        ReplaySample r;
        r.sample.prompt = prompt;
        r.sample.object = object;
        r.sample.split = Split::PtTrain;
        r.sample.individual_id = -1;
        r.sample.template_id = -1;
        r.sample.delta = count_occurrences(prompt);
        r.provenance = "generated";
        r.source_prompt = snippet;
        out.push_back(std::move(r));
        generated += static_cast<long>(object.size());
    }
    return out;
}

ReplayCorpus dedup_replay(std::vector<ReplaySample> candidates, const DedupConfig& config,
                          std::uint64_t seed) {
    MinHasher hasher(config.shingle_len, config.num_hashes, seed);
    ReplayCorpus corpus;
    std::vector<std::vector<std::uint64_t>> retained_sigs;
    std::set<std::vector<TokenId>> exact_seen;

    for (ReplaySample& cand : candidates) {
        std::vector<TokenId> tokens = cand.sample.prompt;
        tokens.insert(tokens.end(), cand.sample.object.begin(), cand.sample.object.end());
        if (!exact_seen.insert(tokens).second) {
            corpus.dropped_duplicates++;
            continue;
        }
        auto sig = hasher.signature(tokens);
        bool redundant = false;
        for (const auto& prev : retained_sigs) {
            if (MinHasher::estimate_jaccard(sig, prev) >= config.threshold) {
                redundant = true;
                break;
            }
        }
        if (redundant) {
            corpus.dropped_duplicates++;
            continue;
        }
        corpus.token_count += static_cast<long>(tokens.size());
        retained_sigs.push_back(std::move(sig));
        corpus.samples.push_back(std::move(cand));
    }
    return corpus;
}

void save_replay(const std::string& path, const ReplayCorpus& corpus) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    for (const ReplaySample& r : corpus.samples) {
        const Sample& s = r.sample;
        os << split_name(s.split) << '\t' << s.individual_id << '\t' << s.template_id << '\t';
        for (size_t i = 0; i < s.prompt.size(); ++i) os << (i ? " " : "") << s.prompt[i];
        os << '\t';
        for (size_t i = 0; i < s.object.size(); ++i) os << (i ? " " : "") << s.object[i];
        os << '\t' << r.provenance << '\n';
    }
}

ReplayCorpus load_replay(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    ReplayCorpus corpus;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream iss(line);
        std::string split_tag, ind, tpl, prompt, object, provenance;
        if (!std::getline(iss, split_tag, '\t') || !std::getline(iss, ind, '\t') ||
            !std::getline(iss, tpl, '\t') || !std::getline(iss, prompt, '\t') ||
            !std::getline(iss, object, '\t') || !std::getline(iss, provenance))
            throw std::runtime_error("load_replay: malformed line: " + line);
        ReplaySample r;
        r.sample.split = split_from_name(split_tag);
        r.sample.individual_id = std::stoi(ind);
        r.sample.template_id = std::stoi(tpl);
        std::istringstream ps(prompt), os_(object);
        TokenId t;
        while (ps >> t) r.sample.prompt.push_back(t);
        while (os_ >> t) r.sample.object.push_back(t);
        r.sample.delta = count_occurrences(r.sample.prompt);
        r.provenance = provenance;
        corpus.token_count += token_count_of(r.sample);
        corpus.samples.push_back(std::move(r));
    }
    return corpus;
}

namespace {

struct LoopContext {
    const std::vector<Sample>* primary = nullptr;       // drawn with probability alpha
    const std::vector<const Sample*>* replay = nullptr; // drawn otherwise
    double alpha = 1.0;
};

Trajectory training_loop(ModelParams& params, const LoopContext& ctx, const TrainConfig& config,
                         const EvalHooks& hooks, const StopRule& stop, std::uint64_t seed) {
    if (ctx.primary->empty()) throw std::invalid_argument("training loop: empty corpus");
    Rng rng(seed);
    Trajectory traj;

    const bool has_q = params.variant != AttnVariant::Softmax;
    Eigen::VectorXd q0;
    std::vector<TokenId> tracked_tokens;
    if (has_q) {
        q0 = conserved_quantity(params, config.eta_y, config.eta_z);
        std::set<TokenId> seen;
        for (const Sample& s : *ctx.primary)
            for (auto [t, c] : s.delta) seen.insert(t);
        tracked_tokens.assign(seen.begin(), seen.end());
    }

    auto draw_sample = [&]() -> const Sample* {
        if (ctx.replay && std::bernoulli_distribution(ctx.alpha)(rng) == false) {
            const auto& pool = *ctx.replay;
            return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
        }
        return &(*ctx.primary)[std::uniform_int_distribution<size_t>(0, ctx.primary->size() - 1)(rng)];
    };

    double loss_accum = 0;
    long loss_count = 0;
    const long interval = std::max<long>(1, hooks.interval);

    auto log_point = [&](long step) {
        TrajectoryPoint point;
        point.step = step;
        point.loss = loss_count ? loss_accum / static_cast<double>(loss_count) : 0.0;
        loss_accum = 0;
        loss_count = 0;
        if (!hooks.original_eval.empty()) {
            point.original = evaluate(params, hooks.original_eval);
            point.original.checkpoint_step = step;
        }
        if (!hooks.continual_eval.empty()) {
            point.continual = evaluate(params, hooks.continual_eval);
            point.continual.checkpoint_step = step;
        }
        if (has_q) {
            const Eigen::VectorXd q = conserved_quantity(params, config.eta_y, config.eta_z);
            double drift = 0;
            for (TokenId t : tracked_tokens) drift += std::abs(q(t) - q0(t));
            point.mean_q_drift = tracked_tokens.empty() ? 0 : drift / static_cast<double>(tracked_tokens.size());
        }
        if (hooks.on_checkpoint) hooks.on_checkpoint(step, params);
        traj.points.push_back(point);
        return point;
    };

    for (long step = 1; step <= config.steps; ++step) {
        if (config.batch_size <= 1) {
            loss_accum += sgd_step(params, *draw_sample(), config);
        } else {
            std::vector<const Sample*> batch;
            for (int b = 0; b < config.batch_size; ++b) batch.push_back(draw_sample());
            loss_accum += sgd_step_batch(params, batch, config);
        }
        loss_count++;
        if (step % interval == 0 || step == config.steps) {
            const TrajectoryPoint point = log_point(step);
            traj.steps_run = step;
            if (stop.kind == StopKind::ContinualHfta && point.continual.hfta >= stop.threshold) {
                traj.stopped_by_gate = true;
                break;
            }
            if (stop.kind == StopKind::ContinualSfta && point.continual.sfta >= stop.threshold) {
                traj.stopped_by_gate = true;
                break;
            }
        }
    }
    if (traj.steps_run == 0) traj.steps_run = config.steps;
    return traj;
}

}  // namespace

Trajectory run_cpt(ModelParams& params, const std::vector<Sample>& cpt_corpus,
                   const ReplayCorpus* replay, const ContinualMethod& method,
                   const TrainConfig& train_config, const EvalHooks& hooks, const StopRule& stop,
                   std::uint64_t seed) {
    method.validate();
    const bool wants_replay =
        method.tag == MethodTag::StoredReplay || method.tag == MethodTag::GenerativeReplay;
    if (wants_replay && (!replay || replay->samples.empty()))
        throw std::invalid_argument("run_cpt: replay method requested but replay corpus is empty");
    if (replay && !replay->samples.empty() && method.alpha == 1.0)
        throw std::invalid_argument("run_cpt: alpha = 1 is inconsistent with a supplied replay corpus");

    TrainConfig config = train_config;
    if (method.tag == MethodTag::EWC) {
        if (!config.regularizer)
            throw std::invalid_argument("run_cpt: EWC requires importance weights and a reference Y");
        config.regularizer->k = method.ewc_k;
    } else {
        config.regularizer.reset();
    }

    LoopContext ctx;
    ctx.primary = &cpt_corpus;
    ctx.alpha = method.alpha;
    std::vector<const Sample*> replay_pool;
    if (wants_replay) {
        for (const ReplaySample& r : replay->samples) replay_pool.push_back(&r.sample);
        ctx.replay = &replay_pool;
    }
    return training_loop(params, ctx, config, hooks, stop, seed);
}

Trajectory train_phase(ModelParams& params, const std::vector<Sample>& corpus,
                       const TrainConfig& train_config, const EvalHooks& hooks,
                       const StopRule& stop, std::uint64_t seed) {
    LoopContext ctx;
    ctx.primary = &corpus;
    return training_loop(params, ctx, train_config, hooks, stop, seed);
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "step,loss,original_hfta,original_sfta,original_em,continual_hfta,continual_sfta,"
          "continual_em,mean_q_drift\n";
    os.precision(12);
    for (const TrajectoryPoint& p : traj.points)
        os << p.step << ',' << p.loss << ',' << p.original.hfta << ',' << p.original.sfta << ','
           << p.original.em << ',' << p.continual.hfta << ',' << p.continual.sfta << ','
           << p.continual.em << ',' << p.mean_q_drift << '\n';
}

}  // namespace fka
