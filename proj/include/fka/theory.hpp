#ifndef FKA_THEORY_HPP
#define FKA_THEORY_HPP

#include <Eigen/Dense>
#include <vector>

#include "fka/corpus.hpp"
#include "fka/model.hpp"

namespace fka {

// The Bayes-optimal logit matrix: u(o, s) = (1/a_s) [ln Pr(s|o) + (1/L) ln Pr(o)]
// on co-occurring (s, o) pairs. Entries outside the support are undefined and
// excluded from every downstream sum.
struct ReferenceState {
    Eigen::MatrixXd u;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> defined;
    double length_norm = 0;  // the L used in the 1/L prior weighting
};

// a_s is taken from z under the linear variant; tokens with z_s == 0 are
// masked undefined. With length_norm equal to the full prompt length the
// attention-pooled logits of U reproduce the count-based posterior exactly.
ReferenceState reference_state(const CorpusStats& stats, const Eigen::VectorXd& z, double length_norm);

struct OraclePrediction {
    Eigen::VectorXd probabilities;
    bool unseen_token = false;  // uniform fallback was used
};

// Count-based posterior Pr(o | X) proportional to Pr(o) * prod_s Pr(s|o)^delta_s,
// built directly from the stats, independently of U.
OraclePrediction bayes_oracle(const CorpusStats& stats, const std::vector<TokenId>& prompt,
                              int vocab_size);

// Attention-pooled reference logits softmaxed over the support; objects whose
// support misses any prompt token get probability zero.
Eigen::VectorXd reference_prediction(const ReferenceState& ref, const Eigen::VectorXd& z,
                                     const std::vector<std::pair<TokenId, int>>& delta);

// Per-token invariant of the coupled (z, Y) gradient flow. Linear:
// z_s^2/eta_Z - sum_o y_{o,s}^2/eta_Y; exponential: z_s/eta_Z - sum_o y^2/(2 eta_Y).
// The exponential form carries the 1/2 because d(z)/dt lacks the factor 2 that
// d(z^2)/dt contributes in the linear case; only then do the two flow terms cancel.
Eigen::VectorXd conserved_quantity(const ModelParams& params, double eta_y, double eta_z);

double diversity_index(const CorpusStats& stats, TokenId token, double eta_ratio, double constant,
                       double length_norm);

// Jacobian of the softmax at distribution x: diag(x) - x x^T. Symmetric PSD,
// zero row sums, eigenvalues in [0, 1/2].
Eigen::MatrixXd softmax_jacobian(const Eigen::VectorXd& x);

struct EigenExtremes {
    double max_positive = 0;
    double min_positive = 0;
    int positive_count = 0;
};
// Largest/smallest eigenvalues above the 1e-12 zero threshold.
EigenExtremes positive_eigen_extremes(const Eigen::MatrixXd& symmetric);

// One-step error recursion: e' = e - eta_y z_s delta_s H (e + xi).
Eigen::VectorXd taylor_predict(const Eigen::VectorXd& error, double z_s, int delta_s,
                               const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& xi,
                               double eta_y);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);
// Rank correlation with ties broken deterministically by position order.
double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

struct DiversityRecord {
    TokenId token;
    double di;
    double attention;  // sigma(z_s) under the model's variant
    std::string role;
};

struct CorrelationReport {
    std::vector<DiversityRecord> records;
    double pearson = 0;
    double spearman = 0;
};

// Per-token table of DI vs converged attention, over tokens appearing in the
// training data, plus both correlation coefficients.
CorrelationReport correlation_report(const ModelParams& params, const CorpusStats& stats,
                                     double eta_ratio, double length_norm,
                                     const World* world = nullptr);

}  // namespace fka

#endif
