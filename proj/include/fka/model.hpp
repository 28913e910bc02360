#ifndef FKA_MODEL_HPP
#define FKA_MODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fka/rng.hpp"
#include "fka/types.hpp"

namespace fka {

enum class AttnVariant { Linear, Softmax, Exponential };

const char* variant_name(AttnVariant v);
AttnVariant variant_from_name(const std::string& name);

// The reparameterized single-layer transformer: logit matrix Y (D x D, entry
// y(o, s) is token s's support for object o) and the attention pre-activation
// vector z (the query-token column of the attention reparameterization; no
// other column is ever read).
struct ModelParams {
    Eigen::MatrixXd Y;
    Eigen::VectorXd z;
    AttnVariant variant = AttnVariant::Linear;
    double init_scale = 0.0;

    int vocab_size() const { return static_cast<int>(z.size()); }
};

ModelParams init_params(int vocab_size, double init_scale, AttnVariant variant, std::uint64_t seed);

struct Regularizer {
    double k = 0.0;
    Eigen::MatrixXd importance;  // w, same shape as Y
    Eigen::MatrixXd reference;   // Y at CPT start
};

struct TrainConfig {
    double eta_y = 0.1;
    double eta_z = 0.01;
    bool update_y = true;
    bool update_z = true;
    long steps = 0;
    int batch_size = 1;  // 1 = pure SGD; >1 averages gradients over a mini-batch
    std::optional<Regularizer> regularizer;
};

struct Prediction {
    Eigen::VectorXd attention;      // weight per prompt position
    Eigen::VectorXd logits;         // pooled, length D
    Eigen::VectorXd probabilities;  // softmax over logits
};

Prediction forward(const ModelParams& params, const std::vector<TokenId>& prompt);
double loss(const Prediction& prediction, TokenId gold);

// Exact per-sample gradient of the cross-entropy loss on the first object
// token. Only columns of tokens present in the prompt are touched; the
// regularizer (if any) additionally pulls the whole Y toward its reference.
// Returns the pre-update loss.
double sgd_step(ModelParams& params, const Sample& sample, const TrainConfig& config);
double sgd_step_batch(ModelParams& params, const std::vector<const Sample*>& batch, const TrainConfig& config);

// Gradient of the loss with respect to (Y columns of prompt tokens, z entries
// of prompt tokens), exposed for finite-difference verification and Fisher
// estimation. grad_y maps token -> D-vector d(loss)/d(Y.col(token)).
struct SampleGradient {
    std::vector<std::pair<TokenId, Eigen::VectorXd>> grad_y;
    std::vector<std::pair<TokenId, double>> grad_z;
    double loss_value = 0;
};
SampleGradient loss_gradient(const ModelParams& params, const Sample& sample);

struct DecodeConfig {
    double temperature = 1.0;
    double top_p = 1.0;
    int top_k = -1;  // -1 = no truncation
    double repetition_penalty = 1.05;
    int max_tokens = 1;
    bool greedy = false;
};

// Autoregressive object decoding: the query token is re-appended before every
// prediction and already-emitted tokens have their logits divided by the
// repetition penalty.
std::vector<TokenId> decode(const ModelParams& params, const std::vector<TokenId>& prompt,
                            const DecodeConfig& config, std::uint64_t seed);

// Flat binary snapshot: header (magic, D, variant, init scale), Y row-major
// as 64-bit floats, then z.
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

}  // namespace fka

#endif
