#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctpe/data.hpp"
#include "ctpe/labels.hpp"
#include "ctpe/loss.hpp"

namespace ctpe::stage1 {

// Head output layout: index 0 is the per-slice PE label, 1..9 the study
// labels in canonical order.
inline constexpr int kNumOutputs = 1 + labels::kNumStudyLabels;

struct ConvLayer {
    int in_c = 0, out_c = 0, stride = 1;   // 3x3 kernels, pad 1
    std::vector<double> w;                  // [out_c][in_c][3][3]
    std::vector<double> b;                  // [out_c]
};

// Convolutional backbone ("conv<N>": N stages, stride 2 except the last,
// channel widths doubling up to the embedding dim) followed by global
// average pooling and a linear multi-label head.
struct Stage1Model {
    std::string backbone = "conv4";
    int input_h = 0, input_w = 0;
    int d = 0;                              // embedding dimension
    bool input_standardize = false;
    std::vector<ConvLayer> convs;
    std::vector<double> head_w;             // [kNumOutputs][d]
    std::vector<double> head_b;             // [kNumOutputs]

    // spatial size of the feature map produced by layer `i`
    std::pair<int, int> map_size(int layer) const;
};

struct Stage1Settings {
    std::string backbone = "conv4";
    int d = 512;
    int input_h = 64, input_w = 64;
    bool input_standardize = false;
    int epochs = 8;
    int max_slices_per_batch = 64;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip = 10.0;   // global gradient-norm clip, 0 disables
    uint64_t seed = 1234;
    loss::LabelWeights weights;
    bool verbose = false;
};

Stage1Model make_stage1(const Stage1Settings& settings);

// Forward results for one slice.
struct SliceOutput {
    std::vector<double> embedding;                  // d
    std::array<double, kNumOutputs> logits{};
    std::array<double, kNumOutputs> probs{};
};

// windowed: [3][H][W] floats in [0,1]
SliceOutput forward_slice(const Stage1Model& model, const float* windowed, int h, int w);

std::vector<double> extract_embedding(const Stage1Model& model, const float* windowed, int h, int w);
std::array<double, kNumOutputs> predict_slice(const Stage1Model& model, const float* windowed, int h, int w);

// Final post-activation convolutional feature maps (CAM input).
struct FeatureMaps {
    int channels = 0, h = 0, w = 0;
    std::vector<double> maps;               // [channels][h][w]
};
FeatureMaps final_feature_maps(const Stage1Model& model, const float* windowed, int h, int w);

// Columnwise max over slices; per_slice is [n][kNumOutputs].
std::array<double, kNumOutputs> aggregate_study_stage1(
    const std::vector<std::array<double, kNumOutputs>>& per_slice);

// ---------------------------------------------------------------------------
// Training

struct TrainStudy {
    std::string study_id;
    int n = 0, height = 0, width = 0;
    std::vector<float> windowed;            // [n][3][H][W]
    data::StudyLabels labels;

    const float* slice(int k) const {
        return windowed.data() + static_cast<size_t>(k) * 3 * height * width;
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct Stage1TrainResult {
    Stage1Model model;                      // best-on-validation parameters
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

// One optimizer step per study; a study larger than max_slices_per_batch is
// processed in chunks with gradient accumulation so the effective batch is
// still the whole study.
Stage1TrainResult train_stage1(const std::vector<TrainStudy>& train,
                               const std::vector<TrainStudy>& val,
                               const Stage1Settings& settings);

// Mean total loss over studies, inference mode.
double dataset_loss(const Stage1Model& model, const std::vector<TrainStudy>& studies,
                    const loss::LabelWeights& weights);

// Gradients of one study's total loss for every parameter tensor; exposed
// for the finite-difference checks.
struct Stage1Grads {
    std::vector<std::vector<double>> conv_w, conv_b;
    std::vector<double> head_w, head_b;
};

double study_loss_and_grads(const Stage1Model& model, const TrainStudy& study,
                            const loss::LabelWeights& weights, Stage1Grads& grads);

// Study-level probabilities via max aggregation, inference mode.
std::array<double, kNumOutputs> predict_study_stage1(const Stage1Model& model,
                                                     const TrainStudy& study);

} // namespace ctpe::stage1
