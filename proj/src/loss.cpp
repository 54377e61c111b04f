#include "ctpe/loss.hpp"

#include <algorithm>
#include <cmath>

#include "ctpe/error.hpp"

namespace ctpe::loss {

namespace {

double safe_log(double v) { return std::log(std::max(v, kProbClamp)); }

// y*log(p) + (1-y)*log(1-p), floored logs
double log_term(int y, double p) {
    return y ? safe_log(p) : safe_log(1.0 - p);
}

// d/dp of -log_term with floored logs; zero once the argument hits the floor
double neg_log_term_grad(int y, double p) {
    if (y) {
        if (p <= kProbClamp) return 0.0;
        return -1.0 / p;
    }
    if (1.0 - p <= kProbClamp) return 0.0;
    return 1.0 / (1.0 - p);
}

} // namespace

double LabelWeights::study_weight_sum() const {
    double s = 0.0;
    for (double w : study) s += w;
    return s;
}

void LabelWeights::validate() const {
    double total = image;
    for (double w : study) {
        if (w < 0.0) throw usage_error("study label weight must be nonnegative");
        total += w;
    }
    if (image < 0.0) throw usage_error("image weight must be nonnegative");
    if (!(total > 0.0)) throw usage_error("at least one loss weight must be positive");
}

double study_label_loss(int y, double p, double weight) {
    return -weight * log_term(y, p);
}

std::vector<double> image_loss(const std::vector<uint8_t>& y, const std::vector<double>& p,
                               double image_weight) {
    if (y.size() != p.size())
        throw contract_error("image_loss: label count " + std::to_string(y.size()) +
                             " != probability count " + std::to_string(p.size()));
    if (y.empty()) throw contract_error("image_loss: empty study");

    double positives = 0.0;
    for (auto v : y) positives += v;
    const double multiplier = image_weight * positives / static_cast<double>(y.size());

    std::vector<double> out(y.size());
    for (size_t k = 0; k < y.size(); ++k)
        out[k] = -multiplier * log_term(y[k], p[k]);
    return out;
}

StudyLossBreakdown total_study_loss(const std::vector<uint8_t>& y_image,
                                    const std::vector<double>& p_image,
                                    const std::array<uint8_t, labels::kNumStudyLabels>& y_study,
                                    const std::array<double, labels::kNumStudyLabels>& p_study,
                                    const LabelWeights& weights) {
    weights.validate();

    StudyLossBreakdown b;
    b.per_image = image_loss(y_image, p_image, weights.image);
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        b.per_label[j] = study_label_loss(y_study[j], p_study[j], weights.study[j]);

    double positives = 0.0;
    for (auto v : y_image) positives += v;
    b.normalizer = weights.study_weight_sum() + weights.image * positives;
    if (!(b.normalizer > 0.0))
        throw contract_error("total_study_loss: zero normalizer (degenerate weight configuration)");

    double sum = 0.0;
    for (double v : b.per_image) sum += v;
    for (double v : b.per_label) sum += v;
    b.total = sum / b.normalizer;
    return b;
}

TotalLossGradient total_study_loss_grad(const std::vector<uint8_t>& y_image,
                                        const std::vector<double>& p_image,
                                        const std::array<uint8_t, labels::kNumStudyLabels>& y_study,
                                        const std::array<double, labels::kNumStudyLabels>& p_study,
                                        const LabelWeights& weights) {
    if (y_image.size() != p_image.size() || y_image.empty())
        throw contract_error("total_study_loss_grad: bad image arrays");

    double positives = 0.0;
    for (auto v : y_image) positives += v;
    const double normalizer = weights.study_weight_sum() + weights.image * positives;
    if (!(normalizer > 0.0))
        throw contract_error("total_study_loss_grad: zero normalizer");

    const double multiplier = weights.image * positives / static_cast<double>(y_image.size());

    TotalLossGradient g;
    g.d_image.resize(y_image.size());
    for (size_t k = 0; k < y_image.size(); ++k)
        g.d_image[k] = multiplier * neg_log_term_grad(y_image[k], p_image[k]) / normalizer;
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        g.d_study[j] = weights.study[j] * neg_log_term_grad(y_study[j], p_study[j]) / normalizer;
    return g;
}

} // namespace ctpe::loss
