#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctpe/consistency.hpp"
#include "ctpe/data.hpp"
#include "ctpe/labels.hpp"
#include "ctpe/loss.hpp"

namespace ctpe::stage2 {

// Per-slice sequence features, one m-vector per slice in z order.
struct SequenceFeature {
    int n = 0, m = 0;
    std::vector<double> values;   // [n][m]

    const double* row(int k) const { return values.data() + static_cast<size_t>(k) * m; }
};

struct AttentionParams {
    int r = 0, m = 0;
    std::vector<double> v;        // [r][m]
    std::vector<double> w;        // [r]
};

struct AttentionResult {
    std::vector<double> weights;  // [n], nonnegative, sums to 1
    std::vector<double> bag;      // [m]
};

// Softmax over tanh-gated logits (max-subtracted), bag = sum_k a_k h_k.
AttentionResult attention_pool(const AttentionParams& params, const SequenceFeature& features);

enum class Pooling { Attention, Mean };

struct Stage2Model {
    int d = 0;        // input embedding dim
    int hidden = 0;   // LSTM hidden size per direction
    int m = 0;        // sequence feature dim
    int r = 0;        // attention hidden dim
    Pooling pooling = Pooling::Attention;

    // gate order (input, forget, cell, output); [4h][*] row-major
    std::vector<double> fwd_wx, fwd_wh, fwd_b;
    std::vector<double> bwd_wx, bwd_wh, bwd_b;
    std::vector<double> dense_w;   // [m][2h]
    std::vector<double> dense_b;   // [m]
    AttentionParams attn;
    std::vector<double> img_w;     // [m]
    double img_b = 0.0;
    std::vector<double> study_w;   // [9][m]
    std::vector<double> study_b;   // [9]
};

struct Stage2Settings {
    int d = 512;
    int hidden = 128;
    int m = 256;
    int r = 128;
    Pooling pooling = Pooling::Attention;
    int epochs = 100;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip = 10.0;   // global gradient-norm clip, 0 disables
    uint64_t seed = 1234;
    loss::LabelWeights weights;
    bool verbose = false;
};

Stage2Model make_stage2(const Stage2Settings& settings);

// embeddings: [n][d] in acquisition (z) order.
SequenceFeature encode_sequence(const Stage2Model& model, const std::vector<double>& embeddings,
                                int n, int d);

struct StudyPrediction {
    consistency::PredictionSet preds;   // image_probs [n] + 9 study probs
    AttentionResult attention;
    SequenceFeature features;
};

StudyPrediction predict_study(const Stage2Model& model, const std::vector<double>& embeddings,
                              int n, int d);

// ---------------------------------------------------------------------------
// Training

struct FeatureStudy {
    std::string study_id;
    int n = 0, d = 0;
    std::vector<double> embeddings;   // [n][d]
    data::StudyLabels labels;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct Stage2TrainResult {
    Stage2Model model;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

Stage2TrainResult train_stage2(const std::vector<FeatureStudy>& train,
                               const std::vector<FeatureStudy>& val,
                               const Stage2Settings& settings);

double dataset_loss(const Stage2Model& model, const std::vector<FeatureStudy>& studies,
                    const loss::LabelWeights& weights);

// Gradients of the total study loss with respect to every parameter tensor;
// exposed for the finite-difference checks.
struct Stage2Grads {
    std::vector<double> fwd_wx, fwd_wh, fwd_b;
    std::vector<double> bwd_wx, bwd_wh, bwd_b;
    std::vector<double> dense_w, dense_b;
    std::vector<double> attn_v, attn_w;
    std::vector<double> img_w;
    double img_b = 0.0;
    std::vector<double> study_w, study_b;

    explicit Stage2Grads(const Stage2Model& model);
    void zero();
};

double study_loss_and_grads(const Stage2Model& model, const FeatureStudy& study,
                            const loss::LabelWeights& weights, Stage2Grads& grads);

} // namespace ctpe::stage2
