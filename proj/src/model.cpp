#include "fka/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace fka {

const char* variant_name(AttnVariant v) {
    switch (v) {
        case AttnVariant::Linear: return "linear";
        case AttnVariant::Softmax: return "softmax";
        case AttnVariant::Exponential: return "exponential";
    }
    return "?";
}

AttnVariant variant_from_name(const std::string& name) {
    if (name == "linear") return AttnVariant::Linear;
    if (name == "softmax") return AttnVariant::Softmax;
    if (name == "exponential") return AttnVariant::Exponential;
    throw std::invalid_argument("unknown attention variant: " + name);
}

ModelParams init_params(int vocab_size, double init_scale, AttnVariant variant, std::uint64_t seed) {
    if (vocab_size < 2) throw std::invalid_argument("init_params: vocab_size must be >= 2");
    if (init_scale < 0) throw std::invalid_argument("init_params: init_scale must be >= 0");
    ModelParams params;
    params.variant = variant;
    params.init_scale = init_scale;
    params.Y = Eigen::MatrixXd::Zero(vocab_size, vocab_size);
    params.z = Eigen::VectorXd::Zero(vocab_size);
    Rng rng(seed);
    std::uniform_real_distribution<double> sym(-init_scale, init_scale);
    std::uniform_real_distribution<double> pos(0.0, init_scale);
    for (int o = 0; o < vocab_size; ++o)
        for (int s = 0; s < vocab_size; ++s) params.Y(o, s) = sym(rng);
    // z starts nonnegative so linear attention begins with nonnegative scores.
    for (int s = 0; s < vocab_size; ++s) params.z(s) = pos(rng);
    return params;
}

namespace {

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    // scalar exp so extreme gaps underflow to an exact zero probability
    Eigen::VectorXd p(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) p(i) = std::exp(logits(i) - m);
    return p / p.sum();
}

}  // namespace

Prediction forward(const ModelParams& params, const std::vector<TokenId>& prompt) {
    const int d = params.vocab_size();
    const auto n = static_cast<Eigen::Index>(prompt.size());
    for (TokenId t : prompt)
        if (t < 0 || t >= d) throw std::out_of_range("forward: token id out of range");

    Prediction pred;
    pred.attention.resize(n);
    switch (params.variant) {
        case AttnVariant::Linear:
            for (Eigen::Index l = 0; l < n; ++l) pred.attention(l) = params.z(prompt[static_cast<size_t>(l)]);
            break;
        case AttnVariant::Exponential:
            for (Eigen::Index l = 0; l < n; ++l)
                pred.attention(l) = std::exp(params.z(prompt[static_cast<size_t>(l)]));
            break;
        case AttnVariant::Softmax: {
            double total = 0;
            for (Eigen::Index l = 0; l < n; ++l) {
                pred.attention(l) = std::exp(params.z(prompt[static_cast<size_t>(l)]));
                total += pred.attention(l);
            }
            pred.attention /= total;
            break;
        }
    }
    pred.logits = Eigen::VectorXd::Zero(d);
    for (Eigen::Index l = 0; l < n; ++l)
        pred.logits += pred.attention(l) * params.Y.col(prompt[static_cast<size_t>(l)]);
    pred.probabilities = stable_softmax(pred.logits);
    return pred;
}

double loss(const Prediction& prediction, TokenId gold) {
    if (gold < 0 || gold >= prediction.probabilities.size())
        throw std::out_of_range("loss: gold token id out of range");
    return -std::log(std::max(prediction.probabilities(gold), 1e-300));
}

SampleGradient loss_gradient(const ModelParams& params, const Sample& sample) {
    const Prediction pred = forward(params, sample.prompt);
    Eigen::VectorXd residual = pred.probabilities;
    residual(sample.gold()) -= 1.0;  // d(loss)/d(logit)

    SampleGradient grad;
    grad.loss_value = loss(pred, sample.gold());
    const double exp_sum = [&] {
        double s = 0;
        for (TokenId t : sample.prompt) s += std::exp(params.z(t));
        return s;
    }();

    for (auto [token, count] : sample.delta) {
        double coeff = 0;  // shared attention weight of one position holding this token
        switch (params.variant) {
            case AttnVariant::Linear: coeff = params.z(token); break;
            case AttnVariant::Exponential: coeff = std::exp(params.z(token)); break;
            case AttnVariant::Softmax: coeff = std::exp(params.z(token)) / exp_sum; break;
        }
        grad.grad_y.emplace_back(token, (count * coeff) * residual);

        const double ry = residual.dot(params.Y.col(token));
        double gz = 0;
        switch (params.variant) {
            case AttnVariant::Linear: gz = count * ry; break;
            case AttnVariant::Exponential: gz = count * std::exp(params.z(token)) * ry; break;
            case AttnVariant::Softmax: {
                const double a_tok = count * std::exp(params.z(token)) / exp_sum;
                gz = a_tok * (ry - residual.dot(pred.logits));
                break;
            }
        }
        grad.grad_z.emplace_back(token, gz);
    }
    return grad;
}

namespace {

void apply_gradient(ModelParams& params, const SampleGradient& grad, const TrainConfig& config,
                    double scale) {
    if (config.update_y) {
        for (const auto& [token, g] : grad.grad_y) {
            if (!g.allFinite()) throw std::runtime_error("sgd_step: non-finite Y gradient");
            params.Y.col(token) -= (config.eta_y * scale) * g;
        }
    }
    if (config.update_z) {
        for (const auto& [token, g] : grad.grad_z) {
            if (!std::isfinite(g)) throw std::runtime_error("sgd_step: non-finite z gradient");
            params.z(token) -= config.eta_z * scale * g;
        }
    }
    if (config.update_y && config.regularizer && config.regularizer->k > 0) {
        const Regularizer& reg = *config.regularizer;
        params.Y -= (config.eta_y * reg.k * scale) *
                    reg.importance.cwiseProduct(params.Y - reg.reference);
    }
}

}  // namespace

double sgd_step(ModelParams& params, const Sample& sample, const TrainConfig& config) {
    SampleGradient grad = loss_gradient(params, sample);
    apply_gradient(params, grad, config, 1.0);
    return grad.loss_value;
}

double sgd_step_batch(ModelParams& params, const std::vector<const Sample*>& batch,
                      const TrainConfig& config) {
    if (batch.empty()) throw std::invalid_argument("sgd_step_batch: empty batch");
    // Accumulate per-token gradients at the current parameters, then apply once.
    std::unordered_map<TokenId, Eigen::VectorXd> acc_y;
    std::unordered_map<TokenId, double> acc_z;
    double total_loss = 0;
    for (const Sample* s : batch) {
        SampleGradient grad = loss_gradient(params, *s);
        total_loss += grad.loss_value;
        for (auto& [token, g] : grad.grad_y) {
            auto it = acc_y.find(token);
            if (it == acc_y.end()) acc_y.emplace(token, std::move(g));
            else it->second += g;
        }
        for (auto [token, g] : grad.grad_z) acc_z[token] += g;
    }
    SampleGradient total;
    for (auto& [token, g] : acc_y) total.grad_y.emplace_back(token, std::move(g));
    for (auto [token, g] : acc_z) total.grad_z.emplace_back(token, g);
    apply_gradient(params, total, config, 1.0 / static_cast<double>(batch.size()));
    return total_loss / static_cast<double>(batch.size());
}

std::vector<TokenId> decode(const ModelParams& params, const std::vector<TokenId>& prompt,
                            const DecodeConfig& config, std::uint64_t seed) {
    if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
    if (config.max_tokens < 1) throw std::invalid_argument("decode: max_tokens must be >= 1");
    if (config.temperature <= 0) throw std::invalid_argument("decode: temperature must be positive");

    Rng rng(seed);
    const int d = params.vocab_size();
    // Work on the context without a trailing query token; q is re-appended
    // before every prediction.
    std::vector<TokenId> context = prompt;
    TokenId query = -1;
    if (!context.empty()) {
        query = context.back();
        // The caller's prompt is expected to end with q; keep it as the pivot.
        context.pop_back();
    }
    std::vector<TokenId> emitted;
    std::unordered_set<TokenId> emitted_set;

    for (int step = 0; step < config.max_tokens; ++step) {
        std::vector<TokenId> input = context;
        input.push_back(query);
        Prediction pred = forward(params, input);
        Eigen::VectorXd logits = pred.logits;
        for (TokenId t : emitted_set) logits(t) /= config.repetition_penalty;

        if (config.greedy) {
            Eigen::Index best = 0;
            for (Eigen::Index i = 1; i < logits.size(); ++i)
                if (logits(i) > logits(best)) best = i;
            emitted.push_back(static_cast<TokenId>(best));
            emitted_set.insert(static_cast<TokenId>(best));
            context.push_back(static_cast<TokenId>(best));
            continue;
        }

        logits /= config.temperature;
        std::vector<int> order(static_cast<size_t>(d));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return logits(a) != logits(b) ? logits(a) > logits(b) : a < b;
        });
        int keep = d;
        if (config.top_k > 0) keep = std::min(keep, config.top_k);
        Eigen::VectorXd probs = stable_softmax(logits);
        if (config.top_p < 1.0) {
            double mass = 0;
            int idx = 0;
            while (idx < keep && mass < config.top_p) mass += probs(order[static_cast<size_t>(idx++)]);
            keep = std::max(idx, 1);
        }
        double total = 0;
        for (int i = 0; i < keep; ++i) total += probs(order[static_cast<size_t>(i)]);
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        TokenId chosen = order[static_cast<size_t>(keep - 1)];
        for (int i = 0; i < keep; ++i) {
            u -= probs(order[static_cast<size_t>(i)]);
            if (u <= 0) {
                chosen = order[static_cast<size_t>(i)];
                break;
            }
        }
        emitted.push_back(chosen);
        emitted_set.insert(chosen);
        context.push_back(chosen);
    }
    return emitted;
}

void save_params(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path);
    const char magic[4] = {'F', 'K', 'A', 'P'};
    os.write(magic, 4);
    const std::uint32_t d = static_cast<std::uint32_t>(params.vocab_size());
    const std::uint32_t variant = static_cast<std::uint32_t>(params.variant);
    os.write(reinterpret_cast<const char*>(&d), sizeof d);
    os.write(reinterpret_cast<const char*>(&variant), sizeof variant);
    os.write(reinterpret_cast<const char*>(&params.init_scale), sizeof params.init_scale);
    for (std::uint32_t o = 0; o < d; ++o)
        for (std::uint32_t s = 0; s < d; ++s) {
            const double v = params.Y(o, s);
            os.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    os.write(reinterpret_cast<const char*>(params.z.data()),
             static_cast<std::streamsize>(sizeof(double) * d));
}

ModelParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, "FKAP", 4) != 0) throw std::runtime_error("bad parameter file: " + path);
    std::uint32_t d = 0, variant = 0;
    ModelParams params;
    is.read(reinterpret_cast<char*>(&d), sizeof d);
    is.read(reinterpret_cast<char*>(&variant), sizeof variant);
    is.read(reinterpret_cast<char*>(&params.init_scale), sizeof params.init_scale);
    params.variant = static_cast<AttnVariant>(variant);
    params.Y.resize(d, d);
    for (std::uint32_t o = 0; o < d; ++o)
        for (std::uint32_t s = 0; s < d; ++s) {
            double v;
            is.read(reinterpret_cast<char*>(&v), sizeof v);
            params.Y(o, s) = v;
        }
    params.z.resize(d);
    is.read(reinterpret_cast<char*>(params.z.data()), static_cast<std::streamsize>(sizeof(double) * d));
    if (!is) throw std::runtime_error("truncated parameter file: " + path);
    return params;
}

}  // namespace fka
