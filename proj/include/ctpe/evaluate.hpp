#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctpe/consistency.hpp"
#include "ctpe/data.hpp"
#include "ctpe/stage1.hpp"

namespace ctpe::evaluate {

struct ROCResult {
    std::string label;
    std::vector<double> thresholds;   // descending; starts at +inf
    std::vector<double> fpr, tpr;     // nondecreasing, endpoints (0,0)..(1,1)
    double auc = 0.0;
    int n_pos = 0, n_neg = 0;
};

// Threshold-grouped ROC; auc equals the Mann-Whitney statistic with
// half-credit for ties. Throws "undefined AUC" when only one class is
// present.
ROCResult roc_auc(const std::vector<int>& labels, const std::vector<double>& scores);

struct ActivationMap {
    int map_h = 0, map_w = 0;
    std::vector<double> heat;      // channel-mean of final conv maps, >= 0
    int out_h = 0, out_w = 0;
    std::vector<double> overlay;   // bilinear upsample, normalized to [0,1]
};

ActivationMap compute_cam(const stage1::Stage1Model& model, const float* windowed, int h, int w);

// 2-D embedding of bag-level features; method is "tsne" or "pca".
// Deterministic for a fixed seed.
std::vector<std::array<double, 2>> embed_bags_2d(const std::vector<std::vector<double>>& bags,
                                                 uint64_t seed, const std::string& method = "tsne");

// ---------------------------------------------------------------------------
// Dataset-level metrics, decoupled from model execution: one record per study.

struct StudyRecord {
    std::string study_id;
    std::array<double, labels::kNumStudyLabels> study_probs{};   // post-enforce
    std::vector<double> image_probs;
    data::StudyLabels truth;
    bool has_image_truth = true;
};

struct MetricsRow {
    std::string label;
    bool skipped = false;
    std::string note;
    double auc = 0.0;
    int n_pos = 0, n_neg = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    std::vector<ROCResult> curves;     // for the non-skipped rows
    int consistency_violations = 0;    // over enforced predictions; expected 0
};

// Rows: the nine study labels, a derived "pe_present" row (1 - negative_for_pe
// on both score and truth) and an "image_pe" row pooled over slices. Labels
// with a single class in the split are marked skipped. Throws when the
// pe_present row itself is single-class.
MetricsReport evaluate_records(const std::vector<StudyRecord>& records);

std::string format_metrics_csv(const MetricsReport& report);

} // namespace ctpe::evaluate
