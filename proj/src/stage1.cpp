#include "ctpe/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "ctpe/adam.hpp"
#include "ctpe/error.hpp"
#include "ctpe/kernels.hpp"
#include "ctpe/rng.hpp"

namespace ctpe::stage1 {

namespace {

constexpr int kKernel = 3;
constexpr int kPad = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int conv_out(int size, int stride) { return (size + 2 * kPad - kKernel) / stride + 1; }

// "conv<N>" with an optional "p" suffix for fixed coordinate input planes
int parse_backbone_stages(const std::string& name, bool* positional = nullptr) {
    std::string base = name;
    bool pos = false;
    if (!base.empty() && base.back() == 'p') {
        pos = true;
        base.pop_back();
    }
    if (positional) *positional = pos;
    if (base.rfind("conv", 0) != 0 || base.size() != 5 || base[4] < '2' || base[4] > '6')
        throw usage_error("unknown backbone '" + name + "' (expected conv2..conv6, optional p suffix)");
    return base[4] - '0';
}

bool backbone_positional(const std::string& name) {
    bool pos = false;
    parse_backbone_stages(name, &pos);
    return pos;
}

// Slice input plus every conv activation, kept for the backward pass.
struct ForwardCache {
    std::vector<double> input;                  // [3][H][W]
    std::vector<std::vector<double>> pre;       // pre-activation per layer
    std::vector<std::vector<double>> post;      // post-ReLU per layer
    std::vector<double> embedding;              // [d]
    std::array<double, kNumOutputs> logits{};
    std::array<double, kNumOutputs> probs{};
};

void prepare_input(const Stage1Model& model, const float* windowed, int h, int w,
                   std::vector<double>& out) {
    if (h != model.input_h || w != model.input_w)
        throw contract_error("stage1: slice shape " + std::to_string(h) + "x" + std::to_string(w) +
                             " does not match model input " + std::to_string(model.input_h) + "x" +
                             std::to_string(model.input_w));
    const size_t count = static_cast<size_t>(3) * h * w;
    const size_t plane = static_cast<size_t>(h) * w;
    const bool positional = backbone_positional(model.backbone);
    out.resize(positional ? count + 2 * plane : count);
    for (size_t i = 0; i < count; ++i) out[i] = static_cast<double>(windowed[i]);
    if (model.input_standardize) {
        double mean = 0.0;
        for (size_t i = 0; i < count; ++i) mean += out[i];
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (size_t i = 0; i < count; ++i) var += (out[i] - mean) * (out[i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(count)) + 1e-6;
        for (size_t i = 0; i < count; ++i) out[i] = (out[i] - mean) / sd;
    }
    if (positional) {
        // fixed coordinate ramps in [-1,1]; lets pooled features carry
        // left/right and top/bottom information
        double* xs = out.data() + count;
        double* ys = xs + plane;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                xs[y * w + x] = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
                ys[y * w + x] = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
            }
    }
}

void forward_cached(const Stage1Model& model, const float* windowed, int h, int w,
                    ForwardCache& cache) {
    prepare_input(model, windowed, h, w, cache.input);
    const int L = static_cast<int>(model.convs.size());
    cache.pre.resize(L);
    cache.post.resize(L);

    int cur_h = h, cur_w = w;
    const double* src = cache.input.data();
    int src_c = backbone_positional(model.backbone) ? 5 : 3;
    for (int i = 0; i < L; ++i) {
        const ConvLayer& layer = model.convs[i];
        const int oh = conv_out(cur_h, layer.stride);
        const int ow = conv_out(cur_w, layer.stride);
        cache.pre[i].resize(static_cast<size_t>(layer.out_c) * oh * ow);
        cache.post[i].resize(cache.pre[i].size());
        kernels::conv2d_forward(src, src_c, cur_h, cur_w, layer.w.data(), layer.b.data(),
                                layer.out_c, kKernel, kKernel, layer.stride, kPad,
                                cache.pre[i].data(), oh, ow);
        kernels::relu_forward(cache.pre[i].data(), cache.pre[i].size(), cache.post[i].data());
        src = cache.post[i].data();
        src_c = layer.out_c;
        cur_h = oh;
        cur_w = ow;
    }

    cache.embedding.resize(model.d);
    kernels::global_avg_pool(src, model.d, cur_h, cur_w, cache.embedding.data());

    kernels::matvec(model.head_w.data(), kNumOutputs, model.d, cache.embedding.data(),
                    cache.logits.data());
    for (int o = 0; o < kNumOutputs; ++o) {
        cache.logits[o] += model.head_b[o];
        cache.probs[o] = sigmoid(cache.logits[o]);
    }
}

struct Grads {
    std::vector<std::vector<double>> conv_w, conv_b;
    std::vector<double> head_w, head_b;

    explicit Grads(const Stage1Model& model) {
        conv_w.resize(model.convs.size());
        conv_b.resize(model.convs.size());
        for (size_t i = 0; i < model.convs.size(); ++i) {
            conv_w[i].assign(model.convs[i].w.size(), 0.0);
            conv_b[i].assign(model.convs[i].b.size(), 0.0);
        }
        head_w.assign(model.head_w.size(), 0.0);
        head_b.assign(model.head_b.size(), 0.0);
    }

    void zero() {
        for (auto& g : conv_w) std::fill(g.begin(), g.end(), 0.0);
        for (auto& g : conv_b) std::fill(g.begin(), g.end(), 0.0);
        std::fill(head_w.begin(), head_w.end(), 0.0);
        std::fill(head_b.begin(), head_b.end(), 0.0);
    }
};

void backward_slice(const Stage1Model& model, const ForwardCache& cache,
                    const std::array<double, kNumOutputs>& dprobs, Grads& grads) {
    std::array<double, kNumOutputs> dlogits;
    for (int o = 0; o < kNumOutputs; ++o)
        dlogits[o] = dprobs[o] * cache.probs[o] * (1.0 - cache.probs[o]);

    kernels::outer_add(dlogits.data(), kNumOutputs, cache.embedding.data(), model.d,
                       grads.head_w.data());
    for (int o = 0; o < kNumOutputs; ++o) grads.head_b[o] += dlogits[o];

    std::vector<double> dembedding(model.d, 0.0);
    kernels::matvec_t_add(model.head_w.data(), kNumOutputs, model.d, dlogits.data(),
                          dembedding.data());

    const int L = static_cast<int>(model.convs.size());
    auto [last_h, last_w] = model.map_size(L - 1);
    std::vector<double> dpost(static_cast<size_t>(model.d) * last_h * last_w);
    kernels::global_avg_pool_backward(dembedding.data(), model.d, last_h, last_w, dpost.data());

    std::vector<double> dpre, dprev;
    int cur_h = last_h, cur_w = last_w;
    for (int i = L - 1; i >= 0; --i) {
        const ConvLayer& layer = model.convs[i];
        dpre.resize(dpost.size());
        kernels::relu_backward(cache.pre[i].data(), dpost.data(), dpost.size(), dpre.data());

        const double* below = i > 0 ? cache.post[i - 1].data() : cache.input.data();
        const auto [in_h, in_w] = i > 0 ? model.map_size(i - 1)
                                        : std::pair<int, int>{model.input_h, model.input_w};
        kernels::conv2d_backward_params(below, layer.in_c, in_h, in_w, dpre.data(), layer.out_c,
                                        cur_h, cur_w, kKernel, kKernel, layer.stride, kPad,
                                        grads.conv_w[i].data(), grads.conv_b[i].data());
        if (i > 0) {
            dprev.resize(static_cast<size_t>(layer.in_c) * in_h * in_w);
            kernels::conv2d_backward_input(dpre.data(), layer.out_c, cur_h, cur_w, layer.w.data(),
                                           layer.in_c, kKernel, kKernel, layer.stride, kPad,
                                           dprev.data(), in_h, in_w);
            dpost.swap(dprev);
            cur_h = in_h;
            cur_w = in_w;
        }
    }
}

void apply_adam(Adam& adam, Stage1Model& model, Grads& grads) {
    double sq = Adam::sq_norm(grads.head_w) + Adam::sq_norm(grads.head_b);
    for (const auto& g : grads.conv_w) sq += Adam::sq_norm(g);
    for (const auto& g : grads.conv_b) sq += Adam::sq_norm(g);
    adam.begin_step(sq);
    size_t slot = 0;
    for (size_t i = 0; i < model.convs.size(); ++i) {
        adam.update(slot++, model.convs[i].w, grads.conv_w[i]);
        adam.update(slot++, model.convs[i].b, grads.conv_b[i]);
    }
    adam.update(slot++, model.head_w, grads.head_w);
    adam.update(slot++, model.head_b, grads.head_b);
}

} // namespace

std::pair<int, int> Stage1Model::map_size(int layer) const {
    int h = input_h, w = input_w;
    for (int i = 0; i <= layer; ++i) {
        h = conv_out(h, convs[i].stride);
        w = conv_out(w, convs[i].stride);
    }
    return {h, w};
}

Stage1Model make_stage1(const Stage1Settings& settings) {
    const int stages = parse_backbone_stages(settings.backbone);
    if (settings.d < 8) throw usage_error("embedding dim must be >= 8");
    if (settings.input_h < 8 || settings.input_w < 8)
        throw usage_error("stage1 input size must be >= 8x8");

    Stage1Model model;
    model.backbone = settings.backbone;
    model.input_h = settings.input_h;
    model.input_w = settings.input_w;
    model.d = settings.d;
    model.input_standardize = settings.input_standardize;

    Rng rng(settings.seed);
    int in_c = backbone_positional(settings.backbone) ? 5 : 3;
    for (int i = 0; i < stages; ++i) {
        ConvLayer layer;
        layer.in_c = in_c;
        layer.out_c = i == stages - 1 ? settings.d
                                      : std::max(8, settings.d >> (stages - 1 - i));
        layer.stride = i == stages - 1 ? 1 : 2;
        layer.w.resize(static_cast<size_t>(layer.out_c) * layer.in_c * kKernel * kKernel);
        layer.b.assign(layer.out_c, 0.0);
        const double bound = std::sqrt(6.0 / (layer.in_c * kKernel * kKernel));
        for (auto& v : layer.w) v = rng.uniform(-bound, bound);
        model.convs.push_back(std::move(layer));
        in_c = model.convs.back().out_c;
    }
    // sanity: the backbone must not collapse the spatial map
    const auto [fh, fw] = model.map_size(stages - 1);
    if (fh < 1 || fw < 1) throw usage_error("backbone too deep for input size");

    model.head_w.resize(static_cast<size_t>(kNumOutputs) * settings.d);
    model.head_b.assign(kNumOutputs, 0.0);
    const double bound = std::sqrt(6.0 / (settings.d + kNumOutputs));
    for (auto& v : model.head_w) v = rng.uniform(-bound, bound);
    return model;
}

SliceOutput forward_slice(const Stage1Model& model, const float* windowed, int h, int w) {
    ForwardCache cache;
    forward_cached(model, windowed, h, w, cache);
    SliceOutput out;
    out.embedding = std::move(cache.embedding);
    out.logits = cache.logits;
    out.probs = cache.probs;
    return out;
}

std::vector<double> extract_embedding(const Stage1Model& model, const float* windowed, int h, int w) {
    return forward_slice(model, windowed, h, w).embedding;
}

std::array<double, kNumOutputs> predict_slice(const Stage1Model& model, const float* windowed,
                                              int h, int w) {
    return forward_slice(model, windowed, h, w).probs;
}

FeatureMaps final_feature_maps(const Stage1Model& model, const float* windowed, int h, int w) {
    ForwardCache cache;
    forward_cached(model, windowed, h, w, cache);
    const int last = static_cast<int>(model.convs.size()) - 1;
    FeatureMaps maps;
    maps.channels = model.convs[last].out_c;
    std::tie(maps.h, maps.w) = model.map_size(last);
    maps.maps = std::move(cache.post[last]);
    return maps;
}

std::array<double, kNumOutputs> aggregate_study_stage1(
    const std::vector<std::array<double, kNumOutputs>>& per_slice) {
    if (per_slice.empty()) throw contract_error("aggregate_study_stage1: empty study");
    std::array<double, kNumOutputs> out = per_slice[0];
    for (const auto& row : per_slice)
        for (int j = 0; j < kNumOutputs; ++j) out[j] = std::max(out[j], row[j]);
    return out;
}

namespace {

struct StudyForward {
    std::vector<std::array<double, kNumOutputs>> probs;   // per slice
    std::vector<double> image_probs;
    std::array<double, labels::kNumStudyLabels> study_probs{};
    std::array<int, labels::kNumStudyLabels> argmax{};
};

StudyForward forward_study(const Stage1Model& model, const TrainStudy& study,
                           std::vector<ForwardCache>* caches) {
    StudyForward f;
    f.probs.resize(study.n);
    if (caches) caches->resize(study.n);
    for (int k = 0; k < study.n; ++k) {
        ForwardCache local;
        ForwardCache& cache = caches ? (*caches)[k] : local;
        forward_cached(model, study.slice(k), study.height, study.width, cache);
        f.probs[k] = cache.probs;
    }
    f.image_probs.resize(study.n);
    for (int k = 0; k < study.n; ++k) f.image_probs[k] = f.probs[k][0];
    for (int j = 0; j < labels::kNumStudyLabels; ++j) {
        int best = 0;
        for (int k = 1; k < study.n; ++k)
            if (f.probs[k][j + 1] > f.probs[best][j + 1]) best = k;
        f.argmax[j] = best;
        f.study_probs[j] = f.probs[best][j + 1];
    }
    return f;
}

double train_step(Stage1Model& model, Adam& adam, const TrainStudy& study,
                  const Stage1Settings& settings, Grads& grads) {
    const bool fits = study.n <= settings.max_slices_per_batch;
    std::vector<ForwardCache> caches;
    const StudyForward f = forward_study(model, study, fits ? &caches : nullptr);

    const auto breakdown = loss::total_study_loss(study.labels.image_pe, f.image_probs,
                                                  study.labels.study, f.study_probs,
                                                  settings.weights);
    const auto grad = loss::total_study_loss_grad(study.labels.image_pe, f.image_probs,
                                                  study.labels.study, f.study_probs,
                                                  settings.weights);

    std::vector<std::array<double, kNumOutputs>> dprobs(study.n);
    for (auto& row : dprobs) row.fill(0.0);
    for (int k = 0; k < study.n; ++k) dprobs[k][0] = grad.d_image[k];
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        dprobs[f.argmax[j]][j + 1] += grad.d_study[j];   // max-aggregation subgradient

    grads.zero();
    for (int k = 0; k < study.n; ++k) {
        bool any = false;
        for (double g : dprobs[k])
            if (g != 0.0) any = true;
        if (!any) continue;
        if (fits) {
            backward_slice(model, caches[k], dprobs[k], grads);
        } else {
            ForwardCache cache;
            forward_cached(model, study.slice(k), study.height, study.width, cache);
            backward_slice(model, cache, dprobs[k], grads);
        }
    }
    apply_adam(adam, model, grads);
    return breakdown.total;
}

} // namespace

double study_loss_and_grads(const Stage1Model& model, const TrainStudy& study,
                            const loss::LabelWeights& weights, Stage1Grads& out) {
    std::vector<ForwardCache> caches;
    const StudyForward f = forward_study(model, study, &caches);
    const auto breakdown = loss::total_study_loss(study.labels.image_pe, f.image_probs,
                                                  study.labels.study, f.study_probs, weights);
    const auto grad = loss::total_study_loss_grad(study.labels.image_pe, f.image_probs,
                                                  study.labels.study, f.study_probs, weights);

    std::vector<std::array<double, kNumOutputs>> dprobs(study.n);
    for (auto& row : dprobs) row.fill(0.0);
    for (int k = 0; k < study.n; ++k) dprobs[k][0] = grad.d_image[k];
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        dprobs[f.argmax[j]][j + 1] += grad.d_study[j];

    Grads grads(model);
    for (int k = 0; k < study.n; ++k) backward_slice(model, caches[k], dprobs[k], grads);

    out.conv_w = grads.conv_w;
    out.conv_b = grads.conv_b;
    out.head_w = grads.head_w;
    out.head_b = grads.head_b;
    return breakdown.total;
}

double dataset_loss(const Stage1Model& model, const std::vector<TrainStudy>& studies,
                    const loss::LabelWeights& weights) {
    if (studies.empty()) throw contract_error("dataset_loss: empty dataset");
    double sum = 0.0;
    for (const auto& study : studies) {
        const StudyForward f = forward_study(model, study, nullptr);
        sum += loss::total_study_loss(study.labels.image_pe, f.image_probs, study.labels.study,
                                      f.study_probs, weights)
                   .total;
    }
    return sum / static_cast<double>(studies.size());
}

std::array<double, kNumOutputs> predict_study_stage1(const Stage1Model& model,
                                                     const TrainStudy& study) {
    const StudyForward f = forward_study(model, study, nullptr);
    return aggregate_study_stage1(f.probs);
}

Stage1TrainResult train_stage1(const std::vector<TrainStudy>& train,
                               const std::vector<TrainStudy>& val,
                               const Stage1Settings& settings) {
    if (train.empty()) throw usage_error("train_stage1: empty training set");
    for (const auto& s : train)
        if (static_cast<int>(s.labels.image_pe.size()) != s.n)
            throw usage_error("train_stage1: study '" + s.study_id + "' lacks complete labels");
    settings.weights.validate();

    Stage1TrainResult result;
    Stage1Model model = make_stage1(settings);
    Adam adam(settings.lr, settings.beta1, settings.beta2, settings.eps, settings.clip);
    Grads grads(model);
    Rng shuffle_rng(settings.seed ^ 0x5bd1e995u);

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    result.best_val_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double train_loss = 0.0;
        for (size_t idx : order)
            train_loss += train_step(model, adam, train[idx], settings, grads);
        train_loss /= static_cast<double>(train.size());

        // model selection on validation loss; falls back to train loss when
        // no validation studies exist
        const double val_loss =
            val.empty() ? train_loss : dataset_loss(model, val, settings.weights);
        result.log.push_back({epoch, train_loss, val_loss});
        if (settings.verbose)
            fprintf(stderr, "stage1 epoch %d train %.6f val %.6f\n", epoch, train_loss, val_loss);
        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    return result;
}

} // namespace ctpe::stage1
