#include "ctpe/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ctpe/adam.hpp"
#include "ctpe/error.hpp"
#include "ctpe/kernels.hpp"
#include "ctpe/rng.hpp"

namespace ctpe::stage2 {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void init_uniform(std::vector<double>& v, double bound, Rng& rng) {
    for (auto& x : v) x = rng.uniform(-bound, bound);
}

// One direction of the LSTM over n steps; keeps everything needed for BPTT.
struct LstmTrace {
    int n = 0, h = 0;
    std::vector<double> gates;   // [n][4h] post-activation (i,f,g,o)
    std::vector<double> c;       // [n][h]
    std::vector<double> hidden;  // [n][h]
};

// x is [n][d] walked in the order given by `index(k)`; hidden[k] is stored
// at the sequence position, not the walk position.
template <typename IndexFn>
void lstm_forward(const double* x, int n, int d, int h,
                  const std::vector<double>& wx, const std::vector<double>& wh,
                  const std::vector<double>& b, IndexFn index, LstmTrace& trace) {
    trace.n = n;
    trace.h = h;
    trace.gates.assign(static_cast<size_t>(n) * 4 * h, 0.0);
    trace.c.assign(static_cast<size_t>(n) * h, 0.0);
    trace.hidden.assign(static_cast<size_t>(n) * h, 0.0);

    std::vector<double> pre(4 * h);
    std::vector<double> h_prev(h, 0.0), c_prev(h, 0.0);
    for (int step = 0; step < n; ++step) {
        const int k = index(step);
        const double* xk = x + static_cast<size_t>(k) * d;
        kernels::matvec(wx.data(), 4 * h, d, xk, pre.data());
        kernels::matvec_add(wh.data(), 4 * h, h, h_prev.data(), pre.data());
        double* gates = trace.gates.data() + static_cast<size_t>(k) * 4 * h;
        double* ck = trace.c.data() + static_cast<size_t>(k) * h;
        double* hk = trace.hidden.data() + static_cast<size_t>(k) * h;
        for (int j = 0; j < h; ++j) {
            const double i_g = sigmoid(pre[j] + b[j]);
            const double f_g = sigmoid(pre[h + j] + b[h + j]);
            const double g_g = std::tanh(pre[2 * h + j] + b[2 * h + j]);
            const double o_g = sigmoid(pre[3 * h + j] + b[3 * h + j]);
            gates[j] = i_g;
            gates[h + j] = f_g;
            gates[2 * h + j] = g_g;
            gates[3 * h + j] = o_g;
            ck[j] = f_g * c_prev[j] + i_g * g_g;
            hk[j] = o_g * std::tanh(ck[j]);
        }
        std::copy(ck, ck + h, c_prev.begin());
        std::copy(hk, hk + h, h_prev.begin());
    }
}

// BPTT for one direction. dh_seq is [n][h] gradient on the stored hidden
// states; parameter gradients accumulate, dx is ignored (stage-2 never
// backpropagates into the cached embeddings).
template <typename IndexFn>
void lstm_backward(const double* x, int n, int d, int h,
                   const std::vector<double>& wh,
                   const LstmTrace& trace, const std::vector<double>& dh_seq, IndexFn index,
                   std::vector<double>& gwx, std::vector<double>& gwh, std::vector<double>& gb) {
    std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0);
    std::vector<double> dpre(4 * h);
    for (int step = n - 1; step >= 0; --step) {
        const int k = index(step);
        const double* gates = trace.gates.data() + static_cast<size_t>(k) * 4 * h;
        const double* ck = trace.c.data() + static_cast<size_t>(k) * h;
        const int k_prev_step = step - 1;
        const double* c_prev =
            k_prev_step >= 0 ? trace.c.data() + static_cast<size_t>(index(k_prev_step)) * h : nullptr;
        const double* h_prev =
            k_prev_step >= 0 ? trace.hidden.data() + static_cast<size_t>(index(k_prev_step)) * h
                             : nullptr;

        for (int j = 0; j < h; ++j) {
            const double dh = dh_seq[static_cast<size_t>(k) * h + j] + dh_next[j];
            const double i_g = gates[j], f_g = gates[h + j], g_g = gates[2 * h + j],
                         o_g = gates[3 * h + j];
            const double tc = std::tanh(ck[j]);
            const double dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            const double d_o = dh * tc;
            const double d_i = dc * g_g;
            const double d_g = dc * i_g;
            const double d_f = dc * (c_prev ? c_prev[j] : 0.0);
            dpre[j] = d_i * i_g * (1.0 - i_g);
            dpre[h + j] = d_f * f_g * (1.0 - f_g);
            dpre[2 * h + j] = d_g * (1.0 - g_g * g_g);
            dpre[3 * h + j] = d_o * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }

        const double* xk = x + static_cast<size_t>(k) * d;
        kernels::outer_add(dpre.data(), 4 * h, xk, d, gwx.data());
        if (h_prev) kernels::outer_add(dpre.data(), 4 * h, h_prev, h, gwh.data());
        for (int j = 0; j < 4 * h; ++j) gb[j] += dpre[j];

        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        kernels::matvec_t_add(wh.data(), 4 * h, h, dpre.data(), dh_next.data());
    }
}

struct ForwardTrace {
    LstmTrace fwd, bwd;
    std::vector<double> concat;    // [n][2h]
    std::vector<double> dense_pre; // [n][m]
    SequenceFeature features;      // post-ReLU
    AttentionResult attention;
    std::vector<double> tanh_gate; // [n][r], attention tanh(V h_k)
    std::vector<double> image_logits, image_probs;           // [n]
    std::array<double, labels::kNumStudyLabels> study_logits{}, study_probs{};
};

void forward_study(const Stage2Model& model, const double* x, int n, ForwardTrace& t) {
    const int h = model.hidden, m = model.m, d = model.d;

    lstm_forward(x, n, d, h, model.fwd_wx, model.fwd_wh, model.fwd_b,
                 [](int s) { return s; }, t.fwd);
    lstm_forward(x, n, d, h, model.bwd_wx, model.bwd_wh, model.bwd_b,
                 [n](int s) { return n - 1 - s; }, t.bwd);

    t.concat.resize(static_cast<size_t>(n) * 2 * h);
    for (int k = 0; k < n; ++k) {
        std::copy_n(t.fwd.hidden.data() + static_cast<size_t>(k) * h, h,
                    t.concat.data() + static_cast<size_t>(k) * 2 * h);
        std::copy_n(t.bwd.hidden.data() + static_cast<size_t>(k) * h, h,
                    t.concat.data() + static_cast<size_t>(k) * 2 * h + h);
    }

    t.dense_pre.resize(static_cast<size_t>(n) * m);
    t.features.n = n;
    t.features.m = m;
    t.features.values.resize(t.dense_pre.size());
    for (int k = 0; k < n; ++k) {
        double* pre = t.dense_pre.data() + static_cast<size_t>(k) * m;
        kernels::matvec(model.dense_w.data(), m, 2 * h, t.concat.data() + static_cast<size_t>(k) * 2 * h, pre);
        for (int j = 0; j < m; ++j) pre[j] += model.dense_b[j];
    }
    kernels::relu_forward(t.dense_pre.data(), t.dense_pre.size(), t.features.values.data());

    if (model.pooling == Pooling::Attention) {
        const int r = model.r;
        t.tanh_gate.resize(static_cast<size_t>(n) * r);
        std::vector<double> logits(n);
        for (int k = 0; k < n; ++k) {
            double* gate = t.tanh_gate.data() + static_cast<size_t>(k) * r;
            kernels::matvec(model.attn.v.data(), r, m, t.features.row(k), gate);
            double logit = 0.0;
            for (int j = 0; j < r; ++j) {
                gate[j] = std::tanh(gate[j]);
                logit += model.attn.w[j] * gate[j];
            }
            logits[k] = logit;
        }
        const double max_logit = *std::max_element(logits.begin(), logits.end());
        t.attention.weights.resize(n);
        double denom = 0.0;
        for (int k = 0; k < n; ++k) {
            t.attention.weights[k] = std::exp(logits[k] - max_logit);
            denom += t.attention.weights[k];
        }
        for (double& a : t.attention.weights) a /= denom;
    } else {
        t.attention.weights.assign(n, 1.0 / n);
    }
    t.attention.bag.assign(m, 0.0);
    for (int k = 0; k < n; ++k) {
        const double a = t.attention.weights[k];
        const double* hk = t.features.row(k);
        for (int j = 0; j < m; ++j) t.attention.bag[j] += a * hk[j];
    }

    t.image_logits.resize(n);
    t.image_probs.resize(n);
    for (int k = 0; k < n; ++k) {
        double acc = model.img_b;
        const double* hk = t.features.row(k);
        for (int j = 0; j < m; ++j) acc += model.img_w[j] * hk[j];
        t.image_logits[k] = acc;
        t.image_probs[k] = sigmoid(acc);
    }
    kernels::matvec(model.study_w.data(), labels::kNumStudyLabels, m, t.attention.bag.data(),
                    t.study_logits.data());
    for (int j = 0; j < labels::kNumStudyLabels; ++j) {
        t.study_logits[j] += model.study_b[j];
        t.study_probs[j] = sigmoid(t.study_logits[j]);
    }
}

void check_input(const Stage2Model& model, int n, int d) {
    if (n < 1) throw contract_error("stage2: empty study (n = 0)");
    if (d != model.d)
        throw contract_error("stage2: embedding dim " + std::to_string(d) +
                             " does not match model d " + std::to_string(model.d));
}

} // namespace

AttentionResult attention_pool(const AttentionParams& params, const SequenceFeature& features) {
    if (features.n < 1) throw contract_error("attention_pool: empty feature sequence");
    if (features.m != params.m)
        throw contract_error("attention_pool: feature dim " + std::to_string(features.m) +
                             " != params m " + std::to_string(params.m));
    const int n = features.n, m = features.m, r = params.r;

    std::vector<double> logits(n);
    std::vector<double> gate(r);
    for (int k = 0; k < n; ++k) {
        kernels::matvec(params.v.data(), r, m, features.row(k), gate.data());
        double logit = 0.0;
        for (int j = 0; j < r; ++j) logit += params.w[j] * std::tanh(gate[j]);
        logits[k] = logit;
    }

    AttentionResult out;
    out.weights.resize(n);
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (int k = 0; k < n; ++k) {
        out.weights[k] = std::exp(logits[k] - max_logit);
        denom += out.weights[k];
    }
    for (double& a : out.weights) a /= denom;

    out.bag.assign(m, 0.0);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < m; ++j) out.bag[j] += out.weights[k] * features.row(k)[j];
    return out;
}

Stage2Model make_stage2(const Stage2Settings& settings) {
    if (settings.d < 1 || settings.hidden < 1 || settings.m < 1 || settings.r < 1)
        throw usage_error("stage2 dims must be positive");

    Stage2Model model;
    model.d = settings.d;
    model.hidden = settings.hidden;
    model.m = settings.m;
    model.r = settings.r;
    model.pooling = settings.pooling;

    Rng rng(settings.seed);
    const int h = settings.hidden;
    auto init_lstm = [&](std::vector<double>& wx, std::vector<double>& wh, std::vector<double>& b) {
        wx.resize(static_cast<size_t>(4) * h * settings.d);
        wh.resize(static_cast<size_t>(4) * h * h);
        b.assign(static_cast<size_t>(4) * h, 0.0);
        init_uniform(wx, std::sqrt(6.0 / (settings.d + h)), rng);
        init_uniform(wh, std::sqrt(6.0 / (2.0 * h)), rng);
        for (int j = 0; j < h; ++j) b[h + j] = 1.0;   // forget gate bias
    };
    init_lstm(model.fwd_wx, model.fwd_wh, model.fwd_b);
    init_lstm(model.bwd_wx, model.bwd_wh, model.bwd_b);

    model.dense_w.resize(static_cast<size_t>(settings.m) * 2 * h);
    model.dense_b.assign(settings.m, 0.0);
    init_uniform(model.dense_w, std::sqrt(6.0 / (2.0 * h + settings.m)), rng);

    model.attn.r = settings.r;
    model.attn.m = settings.m;
    model.attn.v.resize(static_cast<size_t>(settings.r) * settings.m);
    model.attn.w.resize(settings.r);
    init_uniform(model.attn.v, std::sqrt(6.0 / (settings.m + settings.r)), rng);
    init_uniform(model.attn.w, std::sqrt(6.0 / static_cast<double>(settings.r)), rng);

    model.img_w.resize(settings.m);
    init_uniform(model.img_w, std::sqrt(6.0 / static_cast<double>(settings.m)), rng);
    model.study_w.resize(static_cast<size_t>(labels::kNumStudyLabels) * settings.m);
    model.study_b.assign(labels::kNumStudyLabels, 0.0);
    init_uniform(model.study_w, std::sqrt(6.0 / static_cast<double>(settings.m)), rng);
    return model;
}

SequenceFeature encode_sequence(const Stage2Model& model, const std::vector<double>& embeddings,
                                int n, int d) {
    check_input(model, n, d);
    ForwardTrace t;
    forward_study(model, embeddings.data(), n, t);
    return std::move(t.features);
}

StudyPrediction predict_study(const Stage2Model& model, const std::vector<double>& embeddings,
                              int n, int d) {
    check_input(model, n, d);
    ForwardTrace t;
    forward_study(model, embeddings.data(), n, t);

    StudyPrediction out;
    out.preds.image_probs = t.image_probs;
    out.preds.study_probs = t.study_probs;
    out.attention = std::move(t.attention);
    out.features = std::move(t.features);
    return out;
}

Stage2Grads::Stage2Grads(const Stage2Model& model) {
    fwd_wx.assign(model.fwd_wx.size(), 0.0);
    fwd_wh.assign(model.fwd_wh.size(), 0.0);
    fwd_b.assign(model.fwd_b.size(), 0.0);
    bwd_wx.assign(model.bwd_wx.size(), 0.0);
    bwd_wh.assign(model.bwd_wh.size(), 0.0);
    bwd_b.assign(model.bwd_b.size(), 0.0);
    dense_w.assign(model.dense_w.size(), 0.0);
    dense_b.assign(model.dense_b.size(), 0.0);
    attn_v.assign(model.attn.v.size(), 0.0);
    attn_w.assign(model.attn.w.size(), 0.0);
    img_w.assign(model.img_w.size(), 0.0);
    img_b = 0.0;
    study_w.assign(model.study_w.size(), 0.0);
    study_b.assign(model.study_b.size(), 0.0);
}

void Stage2Grads::zero() {
    auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    z(fwd_wx); z(fwd_wh); z(fwd_b);
    z(bwd_wx); z(bwd_wh); z(bwd_b);
    z(dense_w); z(dense_b);
    z(attn_v); z(attn_w);
    z(img_w); z(study_w); z(study_b);
    img_b = 0.0;
}

double study_loss_and_grads(const Stage2Model& model, const FeatureStudy& study,
                            const loss::LabelWeights& weights, Stage2Grads& grads) {
    check_input(model, study.n, study.d);
    const int n = study.n, h = model.hidden, m = model.m, r = model.r;

    ForwardTrace t;
    forward_study(model, study.embeddings.data(), n, t);

    const auto breakdown = loss::total_study_loss(study.labels.image_pe, t.image_probs,
                                                  study.labels.study, t.study_probs, weights);
    const auto grad = loss::total_study_loss_grad(study.labels.image_pe, t.image_probs,
                                                  study.labels.study, t.study_probs, weights);

    // heads
    std::array<double, labels::kNumStudyLabels> dstudy_logits;
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        dstudy_logits[j] = grad.d_study[j] * t.study_probs[j] * (1.0 - t.study_probs[j]);
    kernels::outer_add(dstudy_logits.data(), labels::kNumStudyLabels, t.attention.bag.data(), m,
                       grads.study_w.data());
    for (int j = 0; j < labels::kNumStudyLabels; ++j) grads.study_b[j] += dstudy_logits[j];

    std::vector<double> dbag(m, 0.0);
    kernels::matvec_t_add(model.study_w.data(), labels::kNumStudyLabels, m, dstudy_logits.data(),
                          dbag.data());

    std::vector<double> dfeat(static_cast<size_t>(n) * m, 0.0);
    for (int k = 0; k < n; ++k) {
        const double dlogit = grad.d_image[k] * t.image_probs[k] * (1.0 - t.image_probs[k]);
        grads.img_b += dlogit;
        const double* hk = t.features.row(k);
        double* dk = dfeat.data() + static_cast<size_t>(k) * m;
        for (int j = 0; j < m; ++j) {
            grads.img_w[j] += dlogit * hk[j];
            dk[j] += dlogit * model.img_w[j];
        }
    }

    // pooling backward
    if (model.pooling == Pooling::Attention) {
        const auto& a = t.attention.weights;
        std::vector<double> da(n, 0.0);
        for (int k = 0; k < n; ++k) {
            const double* hk = t.features.row(k);
            double acc = 0.0;
            for (int j = 0; j < m; ++j) acc += hk[j] * dbag[j];
            da[k] = acc;
        }
        double inner = 0.0;
        for (int k = 0; k < n; ++k) inner += a[k] * da[k];
        std::vector<double> dgate(r);
        for (int k = 0; k < n; ++k) {
            const double dlogit = a[k] * (da[k] - inner);
            const double* gate = t.tanh_gate.data() + static_cast<size_t>(k) * r;
            const double* hk = t.features.row(k);
            double* dk = dfeat.data() + static_cast<size_t>(k) * m;
            for (int j = 0; j < r; ++j) {
                grads.attn_w[j] += dlogit * gate[j];
                dgate[j] = dlogit * model.attn.w[j] * (1.0 - gate[j] * gate[j]);
            }
            kernels::outer_add(dgate.data(), r, hk, m, grads.attn_v.data());
            kernels::matvec_t_add(model.attn.v.data(), r, m, dgate.data(), dk);
            // z = sum a_k h_k
            for (int j = 0; j < m; ++j) dk[j] += a[k] * dbag[j];
        }
    } else {
        for (int k = 0; k < n; ++k) {
            double* dk = dfeat.data() + static_cast<size_t>(k) * m;
            for (int j = 0; j < m; ++j) dk[j] += dbag[j] / n;
        }
    }

    // dense backward
    std::vector<double> dpre(static_cast<size_t>(n) * m);
    kernels::relu_backward(t.dense_pre.data(), dfeat.data(), dfeat.size(), dpre.data());
    std::vector<double> dconcat(static_cast<size_t>(n) * 2 * h, 0.0);
    for (int k = 0; k < n; ++k) {
        const double* dp = dpre.data() + static_cast<size_t>(k) * m;
        const double* uk = t.concat.data() + static_cast<size_t>(k) * 2 * h;
        kernels::outer_add(dp, m, uk, 2 * h, grads.dense_w.data());
        for (int j = 0; j < m; ++j) grads.dense_b[j] += dp[j];
        kernels::matvec_t_add(model.dense_w.data(), m, 2 * h, dp,
                              dconcat.data() + static_cast<size_t>(k) * 2 * h);
    }

    // split concat gradient back into the two directions
    std::vector<double> dh_fwd(static_cast<size_t>(n) * h), dh_bwd(static_cast<size_t>(n) * h);
    for (int k = 0; k < n; ++k) {
        std::copy_n(dconcat.data() + static_cast<size_t>(k) * 2 * h, h,
                    dh_fwd.data() + static_cast<size_t>(k) * h);
        std::copy_n(dconcat.data() + static_cast<size_t>(k) * 2 * h + h, h,
                    dh_bwd.data() + static_cast<size_t>(k) * h);
    }
    lstm_backward(study.embeddings.data(), n, model.d, h, model.fwd_wh, t.fwd, dh_fwd,
                  [](int s) { return s; }, grads.fwd_wx, grads.fwd_wh, grads.fwd_b);
    lstm_backward(study.embeddings.data(), n, model.d, h, model.bwd_wh, t.bwd, dh_bwd,
                  [n](int s) { return n - 1 - s; }, grads.bwd_wx, grads.bwd_wh, grads.bwd_b);

    return breakdown.total;
}

double dataset_loss(const Stage2Model& model, const std::vector<FeatureStudy>& studies,
                    const loss::LabelWeights& weights) {
    if (studies.empty()) throw contract_error("stage2 dataset_loss: empty dataset");
    double sum = 0.0;
    for (const auto& study : studies) {
        ForwardTrace t;
        forward_study(model, study.embeddings.data(), study.n, t);
        sum += loss::total_study_loss(study.labels.image_pe, t.image_probs, study.labels.study,
                                      t.study_probs, weights)
                   .total;
    }
    return sum / static_cast<double>(studies.size());
}

Stage2TrainResult train_stage2(const std::vector<FeatureStudy>& train,
                               const std::vector<FeatureStudy>& val,
                               const Stage2Settings& settings) {
    if (train.empty()) throw usage_error("train_stage2: empty training set");
    for (const auto& s : train) {
        if (s.n < 1 || s.embeddings.size() != static_cast<size_t>(s.n) * s.d)
            throw usage_error("train_stage2: study '" + s.study_id + "' has an empty or truncated feature cache");
        if (static_cast<int>(s.labels.image_pe.size()) != s.n)
            throw usage_error("train_stage2: study '" + s.study_id + "' lacks complete labels");
    }
    settings.weights.validate();

    Stage2TrainResult result;
    Stage2Model model = make_stage2(settings);
    Adam adam(settings.lr, settings.beta1, settings.beta2, settings.eps, settings.clip);
    Stage2Grads grads(model);
    Rng shuffle_rng(settings.seed ^ 0x9747b28cu);

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    result.best_val_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double train_loss = 0.0;
        for (size_t idx : order) {
            grads.zero();
            train_loss += study_loss_and_grads(model, train[idx], settings.weights, grads);
            double sq = grads.img_b * grads.img_b;
            for (const auto* g : {&grads.fwd_wx, &grads.fwd_wh, &grads.fwd_b, &grads.bwd_wx,
                                  &grads.bwd_wh, &grads.bwd_b, &grads.dense_w, &grads.dense_b,
                                  &grads.attn_v, &grads.attn_w, &grads.img_w, &grads.study_w,
                                  &grads.study_b})
                sq += Adam::sq_norm(*g);
            adam.begin_step(sq);
            size_t slot = 0;
            adam.update(slot++, model.fwd_wx, grads.fwd_wx);
            adam.update(slot++, model.fwd_wh, grads.fwd_wh);
            adam.update(slot++, model.fwd_b, grads.fwd_b);
            adam.update(slot++, model.bwd_wx, grads.bwd_wx);
            adam.update(slot++, model.bwd_wh, grads.bwd_wh);
            adam.update(slot++, model.bwd_b, grads.bwd_b);
            adam.update(slot++, model.dense_w, grads.dense_w);
            adam.update(slot++, model.dense_b, grads.dense_b);
            if (model.pooling == Pooling::Attention) {
                adam.update(slot++, model.attn.v, grads.attn_v);
                adam.update(slot++, model.attn.w, grads.attn_w);
            } else {
                slot += 2;
            }
            adam.update(slot++, model.img_w, grads.img_w);
            std::vector<double> imgb{model.img_b}, gimgb{grads.img_b};
            adam.update(slot++, imgb, gimgb);
            model.img_b = imgb[0];
            adam.update(slot++, model.study_w, grads.study_w);
            adam.update(slot++, model.study_b, grads.study_b);
        }
        train_loss /= static_cast<double>(train.size());

        const double val_loss =
            val.empty() ? train_loss : dataset_loss(model, val, settings.weights);
        result.log.push_back({epoch, train_loss, val_loss});
        if (settings.verbose)
            fprintf(stderr, "stage2 epoch %d train %.6f val %.6f\n", epoch, train_loss, val_loss);
        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    return result;
}

} // namespace ctpe::stage2
