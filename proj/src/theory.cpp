#include "fka/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fka {

ReferenceState reference_state(const CorpusStats& stats, const Eigen::VectorXd& z,
                               double length_norm) {
    const int d = static_cast<int>(z.size());
    ReferenceState ref;
    ref.length_norm = length_norm;
    ref.u = Eigen::MatrixXd::Zero(d, d);
    ref.defined = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(d, d, false);

    bool any_defined = false;
    for (const auto& [o, per_token] : stats.pr_s_given_o) {
        const double log_prior = std::log(stats.prob_o(o)) / length_norm;
        for (const auto& [s, p] : per_token) {
            if (p <= 0) continue;
            const double a_s = z(s);
            if (a_s == 0) continue;  // masked undefined
            ref.u(o, s) = (std::log(p) + log_prior) / a_s;
            ref.defined(o, s) = true;
            any_defined = true;
        }
    }
    if (!any_defined) throw std::runtime_error("reference_state: no defined entries (all z zero on support)");
    return ref;
}

OraclePrediction bayes_oracle(const CorpusStats& stats, const std::vector<TokenId>& prompt,
                              int vocab_size) {
    OraclePrediction out;
    out.probabilities = Eigen::VectorXd::Zero(vocab_size);
    for (TokenId t : prompt) {
        if (!stats.seen(t)) {
            out.unseen_token = true;
            out.probabilities.setConstant(1.0 / vocab_size);
            return out;
        }
    }
    const auto delta = count_occurrences(prompt);
    double total = 0;
    std::vector<std::pair<TokenId, double>> mass;
    for (const auto& [o, prior] : stats.pr_o) {
        double log_p = std::log(prior);
        bool support = true;
        for (auto [s, count] : delta) {
            const double p = stats.prob_s_given_o(s, o);
            if (p <= 0) {
                support = false;
                break;
            }
            log_p += count * std::log(p);
        }
        if (support) mass.emplace_back(o, log_p);
    }
    if (mass.empty()) {
        // No object co-occurs with every prompt token; fall back to the prior.
        for (const auto& [o, prior] : stats.pr_o) out.probabilities(o) = prior;
        return out;
    }
    double max_log = mass.front().second;
    for (const auto& [o, lp] : mass) max_log = std::max(max_log, lp);
    for (auto& [o, lp] : mass) {
        lp = std::exp(lp - max_log);
        total += lp;
    }
    for (const auto& [o, p] : mass) out.probabilities(o) = p / total;
    return out;
}

Eigen::VectorXd reference_prediction(const ReferenceState& ref, const Eigen::VectorXd& z,
                                     const std::vector<std::pair<TokenId, int>>& delta) {
    const int d = static_cast<int>(z.size());
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd logits = Eigen::VectorXd::Zero(d);
    std::vector<bool> alive(static_cast<size_t>(d), true);
    for (int o = 0; o < d; ++o) {
        for (auto [s, count] : delta) {
            if (!ref.defined(o, s)) {
                alive[static_cast<size_t>(o)] = false;
                break;
            }
            logits(o) += z(s) * count * ref.u(o, s);
        }
    }
    double max_logit = kNegInf;
    for (int o = 0; o < d; ++o)
        if (alive[static_cast<size_t>(o)]) max_logit = std::max(max_logit, logits(o));
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(d);
    if (max_logit == kNegInf) return probs;
    double total = 0;
    for (int o = 0; o < d; ++o)
        if (alive[static_cast<size_t>(o)]) {
            probs(o) = std::exp(logits(o) - max_logit);
            total += probs(o);
        }
    probs /= total;
    return probs;
}

Eigen::VectorXd conserved_quantity(const ModelParams& params, double eta_y, double eta_z) {
    if (params.variant == AttnVariant::Softmax)
        throw std::invalid_argument("conserved_quantity: no exact conserved form for softmax attention");
    const int d = params.vocab_size();
    Eigen::VectorXd q(d);
    for (int s = 0; s < d; ++s) {
        const double y_norm2 = params.Y.col(s).squaredNorm();
        if (params.variant == AttnVariant::Linear)
            q(s) = params.z(s) * params.z(s) / eta_z - y_norm2 / eta_y;
        else
            q(s) = params.z(s) / eta_z - y_norm2 / (2.0 * eta_y);
    }
    return q;
}

double diversity_index(const CorpusStats& stats, TokenId token, double eta_ratio, double constant,
                       double length_norm) {
    if (!stats.seen(token)) throw std::invalid_argument("diversity_index: token unseen in training data");
    double sum_sq = 0;
    for (const auto& [o, per_token] : stats.pr_s_given_o) {
        auto it = per_token.find(token);
        if (it == per_token.end() || it->second <= 0) continue;
        // Pr(s|o) here is the per-prompt presence probability; the stats store
        // the occurrence-weighted share, which is presence / L. The rescaling
        // is what makes an uninformative always-present token (presence 1,
        // log 0) the highest-DI, lowest-attention case.
        const double term =
            std::log(it->second * length_norm) + std::log(stats.prob_o(o)) / length_norm;
        sum_sq += term * term;
    }
    return -std::sqrt(eta_ratio) * std::pow(sum_sq, 0.25) + constant;
}

Eigen::MatrixXd softmax_jacobian(const Eigen::VectorXd& x) {
    Eigen::MatrixXd h = Eigen::MatrixXd(x.asDiagonal()) - x * x.transpose();
    return h;
}

EigenExtremes positive_eigen_extremes(const Eigen::MatrixXd& symmetric) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
    EigenExtremes out;
    constexpr double kThreshold = 1e-12;
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
        const double lambda = solver.eigenvalues()(i);
        if (lambda <= kThreshold) continue;
        if (out.positive_count == 0) {
            out.max_positive = out.min_positive = lambda;
        } else {
            out.max_positive = std::max(out.max_positive, lambda);
            out.min_positive = std::min(out.min_positive, lambda);
        }
        out.positive_count++;
    }
    return out;
}

Eigen::VectorXd taylor_predict(const Eigen::VectorXd& error, double z_s, int delta_s,
                               const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& xi,
                               double eta_y) {
    return error - eta_y * z_s * delta_s * (jacobian * (error + xi));
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("pearson_correlation: need two equal-length series");
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0 || vb == 0) return 0;
    return cov / std::sqrt(va * vb);
}

namespace {
std::vector<double> ordinal_ranks(const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(v.size());
    for (size_t r = 0; r < order.size(); ++r) ranks[order[r]] = static_cast<double>(r);
    return ranks;
}
}  // namespace

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    return pearson_correlation(ordinal_ranks(a), ordinal_ranks(b));
}

CorrelationReport correlation_report(const ModelParams& params, const CorpusStats& stats,
                                     double eta_ratio, double length_norm, const World* world) {
    CorrelationReport report;
    std::vector<TokenId> tokens;
    for (const auto& [s, objs] : stats.assoc_objects)
        if (!objs.empty()) tokens.push_back(s);
    std::sort(tokens.begin(), tokens.end());
    if (tokens.size() < 3)
        throw std::runtime_error("correlation_report: fewer than 3 tokens with defined DI");

    std::vector<double> di, attn;
    for (TokenId s : tokens) {
        DiversityRecord rec;
        rec.token = s;
        rec.di = diversity_index(stats, s, eta_ratio, 0.0, length_norm);
        // |z| under the linear variant: (z_s, y_s) -> (-z_s, -y_s) is a gauge
        // symmetry of the predictions, so only the magnitude is identified
        rec.attention = params.variant == AttnVariant::Linear ? std::abs(params.z(s))
                                                              : std::exp(params.z(s));
        rec.role = world ? world->token_role(s) : "";
        di.push_back(rec.di);
        attn.push_back(rec.attention);
        report.records.push_back(std::move(rec));
    }
    report.pearson = pearson_correlation(attn, di);
    report.spearman = spearman_correlation(attn, di);
    return report;
}

}  // namespace fka
