#ifndef FKA_CONTINUAL_HPP
#define FKA_CONTINUAL_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fka/corpus.hpp"
#include "fka/eval.hpp"
#include "fka/model.hpp"

namespace fka {

enum class MethodTag { Naive, EWC, StoredReplay, GenerativeReplay };
enum class StoredRule { AllOneBio, HalfTwoBios };
enum class PromptMode { LAMOL, STOC, RandomSnippet };

const char* method_name(MethodTag tag);
const char* stored_rule_name(StoredRule rule);
const char* prompt_mode_name(PromptMode mode);
MethodTag method_from_name(const std::string& name);
StoredRule stored_rule_from_name(const std::string& name);
PromptMode prompt_mode_from_name(const std::string& name);

struct DedupConfig {
    int shingle_len = 3;
    int num_hashes = 128;
    double threshold = 0.8;
};

struct ContinualMethod {
    MethodTag tag = MethodTag::Naive;
    // CPT fraction of each training step; replay fills the remaining 1 - alpha.
    double alpha = 1.0;
    // EWC
    double ewc_k = 0.0;
    // Stored replay
    StoredRule stored_rule = StoredRule::AllOneBio;
    // Generative replay
    PromptMode prompt_mode = PromptMode::STOC;
    int window_len = 3;
    DecodeConfig decode_config;
    DedupConfig dedup_config;

    void validate() const;
};

struct ReplaySample {
    Sample sample;
    std::string provenance;             // "stored" or "generated"
    std::vector<TokenId> source_prompt; // generation prompt, empty for stored
};

struct ReplayCorpus {
    std::vector<ReplaySample> samples;
    long token_count = 0;
    int skipped_individuals = 0;  // AllOneBio individuals with no biography
    int dropped_duplicates = 0;
};

// Diagonal empirical Fisher over Y from the per-sample closed-form gradient.
Eigen::MatrixXd fisher_importance(const ModelParams& params, const std::vector<Sample>& pt_samples);

ReplayCorpus build_stored_replay(const std::vector<Sample>& pt_training, StoredRule rule,
                                 std::uint64_t seed);

// Snippet prompts for generative replay. STOC keeps the highest-attention
// window per sample and the globally top `budget` windows; LAMOL emits
// trigger-token prompts; RandomSnippet draws uniform windows.
struct PromptSelection {
    std::vector<std::vector<TokenId>> prompts;
    bool window_clamped = false;  // some prompt was shorter than the window
};
PromptSelection select_prompts(PromptMode mode, const ModelParams& pretrained,
                               const std::vector<Sample>& cpt_samples, TokenId lamol_trigger,
                               int window_len, int budget, std::uint64_t seed);

// Decode object tokens from each prompt with the frozen pretrained model and
// wrap the (prompt, generated) pairs as training samples until the cumulative
// generated-token budget is reached.
std::vector<ReplaySample> generate_replay(const ModelParams& pretrained,
                                          const std::vector<std::vector<TokenId>>& prompts,
                                          TokenId query_token, const DecodeConfig& decode_config,
                                          long target_tokens, std::uint64_t seed);

// Greedy MinHash dedup in input order; exact duplicates always removed.
ReplayCorpus dedup_replay(std::vector<ReplaySample> candidates, const DedupConfig& config,
                          std::uint64_t seed);

void save_replay(const std::string& path, const ReplayCorpus& corpus);
ReplayCorpus load_replay(const std::string& path);

enum class StopKind { FixedSteps, ContinualHfta, ContinualSfta };

struct StopRule {
    StopKind kind = StopKind::FixedSteps;
    double threshold = 0.95;  // gate on the continual metric, checked at eval points
};

struct EvalHooks {
    std::vector<Sample> original_eval;   // PT knowledge probes
    std::vector<Sample> continual_eval;  // CPT knowledge probes
    long interval = 200;                 // evaluation / logging cadence in steps
    std::function<void(long step, const ModelParams&)> on_checkpoint;  // optional
};

struct TrajectoryPoint {
    long step = 0;
    double loss = 0;
    MetricRecord original;
    MetricRecord continual;
    double mean_q_drift = 0;  // mean |Q_s(t) - Q_s(0)| over tokens, linear/exponential only
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    long steps_run = 0;
    bool stopped_by_gate = false;
};

// PT -> CPT training step loop: each step draws a CPT sample with probability
// alpha and a replay sample otherwise. EWC freezes the Fisher weights and the
// reference Y at entry.
Trajectory run_cpt(ModelParams& params, const std::vector<Sample>& cpt_corpus,
                   const ReplayCorpus* replay, const ContinualMethod& method,
                   const TrainConfig& train_config, const EvalHooks& hooks, const StopRule& stop,
                   std::uint64_t seed);

// Plain training on one corpus (the PT phase, and the Scratch baseline).
Trajectory train_phase(ModelParams& params, const std::vector<Sample>& corpus,
                       const TrainConfig& train_config, const EvalHooks& hooks,
                       const StopRule& stop, std::uint64_t seed);

void write_trajectory_csv(const std::string& path, const Trajectory& traj);

}  // namespace fka

#endif
