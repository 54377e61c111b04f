#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ctpe/labels.hpp"

namespace ctpe::loss {

// Floor applied to every log argument; keeps saturated predictions finite
// while leaving exact predictions at exactly zero loss.
inline constexpr double kProbClamp = 1e-7;

struct LabelWeights {
    std::array<double, labels::kNumStudyLabels> study;
    double image = 1.0;

    LabelWeights() { study.fill(1.0); }
    double study_weight_sum() const;
    void validate() const;  // all weights >= 0, at least one > 0
};

struct StudyLossBreakdown {
    std::array<double, labels::kNumStudyLabels> per_label{};
    std::vector<double> per_image;
    double total = 0.0;
    double normalizer = 0.0;
};

// -w * [y*log(p) + (1-y)*log(1-p)], log arguments floored at kProbClamp.
double study_label_loss(int y, double p, double weight);

// Shared multiplier image_weight * (sum_k y_k) / n applied to each slice's
// log loss; the positives count comes from ground truth.
std::vector<double> image_loss(const std::vector<uint8_t>& y, const std::vector<double>& p,
                               double image_weight);

StudyLossBreakdown total_study_loss(const std::vector<uint8_t>& y_image,
                                    const std::vector<double>& p_image,
                                    const std::array<uint8_t, labels::kNumStudyLabels>& y_study,
                                    const std::array<double, labels::kNumStudyLabels>& p_study,
                                    const LabelWeights& weights);

// Derivative of the total loss with respect to each probability, evaluated
// with the same clamping as the forward pass.
struct TotalLossGradient {
    std::vector<double> d_image;
    std::array<double, labels::kNumStudyLabels> d_study{};
};

TotalLossGradient total_study_loss_grad(const std::vector<uint8_t>& y_image,
                                        const std::vector<double>& p_image,
                                        const std::array<uint8_t, labels::kNumStudyLabels>& y_study,
                                        const std::array<double, labels::kNumStudyLabels>& p_study,
                                        const LabelWeights& weights);

} // namespace ctpe::loss
