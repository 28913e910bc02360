#ifndef FKA_EVAL_HPP
#define FKA_EVAL_HPP

#include <map>
#include <vector>

#include "fka/model.hpp"

namespace fka {

struct MetricRecord {
    std::string split_tag;
    double hfta = 0;  // greedy first object token equals gold
    double sfta = 0;  // mean probability mass on the gold first token
    double em = 0;    // full greedy object sequence equals gold
    long sample_count = 0;
    long checkpoint_step = -1;
};

MetricRecord evaluate(const ModelParams& params, const std::vector<Sample>& samples);

// EMA smoothing as used for learning-curve plots:
// y'_0 = y_0, y'_t = alpha * y'_{t-1} + (1 - alpha) * y_t.
std::vector<double> smooth_curve(const std::vector<double>& series, double ema_alpha);

struct PlateauKl {
    std::map<int, double> per_template_mean_kl;  // template id -> mean KL
    int skipped_templates = 0;                   // templates with a single sample
    double mean_kl = 0;                          // over analyzed templates
    std::vector<std::pair<double, long>> histogram;  // (bin lower edge, count)
};

// For each template: KL of each sample's predictive distribution against the
// template's mean distribution, averaged. Low values mean answers are
// template-determined rather than subject-determined.
PlateauKl plateau_kl(const ModelParams& params, const std::vector<Sample>& test_samples,
                     int histogram_bins = 20);

}  // namespace fka

#endif
