#include "fka/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fka {

namespace {

// Argmax with ties broken by lowest token id.
TokenId greedy_argmax(const Eigen::VectorXd& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return static_cast<TokenId>(best);
}

}  // namespace

MetricRecord evaluate(const ModelParams& params, const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty sample list");
    MetricRecord rec;
    rec.split_tag = split_name(samples.front().split);
    rec.sample_count = static_cast<long>(samples.size());
    double hit = 0, mass = 0, exact = 0;
    for (const Sample& s : samples) {
        const Prediction pred = forward(params, s.prompt);
        const TokenId first = greedy_argmax(pred.probabilities);
        if (first == s.gold()) hit += 1;
        mass += pred.probabilities(s.gold());
        if (s.object.size() == 1) {
            if (first == s.gold()) exact += 1;
        } else {
            DecodeConfig greedy;
            greedy.greedy = true;
            greedy.max_tokens = static_cast<int>(s.object.size());
            greedy.repetition_penalty = 1.0;
            if (decode(params, s.prompt, greedy, 0) == s.object) exact += 1;
        }
    }
    const double n = static_cast<double>(samples.size());
    rec.hfta = hit / n;
    rec.sfta = mass / n;
    rec.em = exact / n;
    return rec;
}

std::vector<double> smooth_curve(const std::vector<double>& series, double ema_alpha) {
    if (series.empty()) throw std::invalid_argument("smooth_curve: empty series");
    if (ema_alpha < 0 || ema_alpha > 1) throw std::invalid_argument("smooth_curve: alpha in [0,1] required");
    std::vector<double> out;
    out.reserve(series.size());
    out.push_back(series.front());
    for (size_t i = 1; i < series.size(); ++i)
        out.push_back(ema_alpha * out.back() + (1 - ema_alpha) * series[i]);
    return out;
}

namespace {

// KL(p || q) with both distributions floored at 1e-12 and renormalized.
double kl_divergence(Eigen::VectorXd p, Eigen::VectorXd q) {
    p = p.cwiseMax(1e-12);
    q = q.cwiseMax(1e-12);
    p /= p.sum();
    q /= q.sum();
    double kl = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) kl += p(i) * std::log(p(i) / q(i));
    return std::max(kl, 0.0);
}

}  // namespace

PlateauKl plateau_kl(const ModelParams& params, const std::vector<Sample>& test_samples,
                     int histogram_bins) {
    std::map<int, std::vector<const Sample*>> by_template;
    for (const Sample& s : test_samples) by_template[s.template_id].push_back(&s);
    if (by_template.size() < 2) throw std::invalid_argument("plateau_kl: need at least 2 templates");

    PlateauKl out;
    std::vector<double> values;
    for (const auto& [tid, group] : by_template) {
        if (group.size() < 2) {
            out.skipped_templates++;
            continue;
        }
        std::vector<Eigen::VectorXd> dists;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(params.vocab_size());
        for (const Sample* s : group) {
            dists.push_back(forward(params, s->prompt).probabilities);
            mean += dists.back();
        }
        mean /= static_cast<double>(dists.size());
        double total = 0;
        for (const auto& p : dists) total += kl_divergence(p, mean);
        const double template_mean = total / static_cast<double>(dists.size());
        out.per_template_mean_kl[tid] = template_mean;
        values.push_back(template_mean);
    }
    if (values.empty()) throw std::invalid_argument("plateau_kl: every template had a single sample");
    out.mean_kl = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());

    const double max_v = *std::max_element(values.begin(), values.end());
    const double width = max_v > 0 ? max_v / histogram_bins : 1.0;
    std::vector<long> counts(static_cast<size_t>(histogram_bins), 0);
    for (double v : values) {
        int bin = std::min(histogram_bins - 1, static_cast<int>(v / width));
        counts[static_cast<size_t>(bin)]++;
    }
    for (int b = 0; b < histogram_bins; ++b) out.histogram.emplace_back(b * width, counts[static_cast<size_t>(b)]);
    return out;
}

}  // namespace fka
