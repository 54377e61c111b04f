#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ctpe/checkpoint.hpp"
#include "ctpe/error.hpp"
#include "ctpe/rng.hpp"
#include "ctpe/stage2.hpp"

using namespace ctpe;
namespace fs = std::filesystem;

namespace {

stage2::Stage2Settings tiny_settings() {
    stage2::Stage2Settings s;
    s.d = 6;
    s.hidden = 5;
    s.m = 8;
    s.r = 4;
    s.epochs = 1;
    s.seed = 3;
    return s;
}

stage2::SequenceFeature random_features(int n, int m, Rng& rng) {
    stage2::SequenceFeature f;
    f.n = n;
    f.m = m;
    f.values.resize(static_cast<size_t>(n) * m);
    for (auto& v : f.values) v = rng.uniform(-2.0, 2.0);
    return f;
}

stage2::AttentionParams random_params(int r, int m, Rng& rng) {
    stage2::AttentionParams p;
    p.r = r;
    p.m = m;
    p.v.resize(static_cast<size_t>(r) * m);
    p.w.resize(r);
    for (auto& v : p.v) v = rng.uniform(-1.0, 1.0);
    for (auto& v : p.w) v = rng.uniform(-1.0, 1.0);
    return p;
}

// extended-precision brute force of the attention softmax, no stabilization
stage2::AttentionResult attention_oracle(const stage2::AttentionParams& params,
                                         const stage2::SequenceFeature& f) {
    const int n = f.n, m = f.m, r = params.r;
    std::vector<long double> logits(n, 0.0L);
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < r; ++i) {
            long double acc = 0.0L;
            for (int j = 0; j < m; ++j)
                acc += static_cast<long double>(params.v[static_cast<size_t>(i) * m + j]) *
                       f.row(k)[j];
            logits[k] += static_cast<long double>(params.w[i]) * std::tanh(acc);
        }
    }
    long double denom = 0.0L;
    for (int k = 0; k < n; ++k) denom += std::exp(logits[k]);

    stage2::AttentionResult out;
    out.weights.resize(n);
    for (int k = 0; k < n; ++k)
        out.weights[k] = static_cast<double>(std::exp(logits[k]) / denom);
    out.bag.assign(m, 0.0);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < m; ++j) out.bag[j] += out.weights[k] * f.row(k)[j];
    return out;
}

std::vector<stage2::FeatureStudy> toy_feature_studies(int count, int n, int d, uint64_t seed,
                                                      int positive_slices = 2) {
    // positive slices carry a distinct direction in feature space
    Rng rng(seed);
    std::vector<stage2::FeatureStudy> out;
    for (int s = 0; s < count; ++s) {
        stage2::FeatureStudy f;
        f.study_id = "toy" + std::to_string(s);
        f.n = n;
        f.d = d;
        f.embeddings.resize(static_cast<size_t>(n) * d);
        const bool positive = s % 2 == 0;
        f.labels.image_pe.assign(n, 0);
        if (positive) {
            const int start = static_cast<int>(rng.uniform_int(0, n - positive_slices));
            for (int k = start; k < start + positive_slices; ++k) f.labels.image_pe[k] = 1;
            f.labels.study[labels::kLeftsided] = 1;
            f.labels.study[labels::kRvlvLt1] = 1;
        } else {
            f.labels.study[labels::kNegativeForPe] = 1;
        }
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < d; ++j) {
                double v = rng.normal(0.0, 0.3);
                if (f.labels.image_pe[k] && j < d / 2) v += 1.5;
                f.embeddings[static_cast<size_t>(k) * d + j] = v;
            }
        out.push_back(std::move(f));
    }
    return out;
}

} // namespace

TEST_CASE("attention_pool: singleton, symmetry, contract") {
    Rng rng(1);
    const auto params = random_params(4, 8, rng);

    auto single = random_features(1, 8, rng);
    const auto r1 = stage2::attention_pool(params, single);
    REQUIRE(r1.weights.size() == 1);
    CHECK(r1.weights[0] == 1.0);
    for (int j = 0; j < 8; ++j) CHECK(r1.bag[j] == doctest::Approx(single.row(0)[j]));

    // identical rows -> uniform weights, bag equals the row
    stage2::SequenceFeature same;
    same.n = 5;
    same.m = 8;
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 8; ++j) same.values.push_back(0.3 * j - 1.0);
    const auto r2 = stage2::attention_pool(params, same);
    for (double a : r2.weights) CHECK(a == doctest::Approx(0.2).epsilon(1e-12));
    for (int j = 0; j < 8; ++j) CHECK(r2.bag[j] == doctest::Approx(same.row(0)[j]).epsilon(1e-12));

    CHECK_THROWS_AS(stage2::attention_pool(params, stage2::SequenceFeature{}), Error);
}

TEST_CASE("attention_pool matches the extended-precision oracle") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 7));
        const int m = static_cast<int>(rng.uniform_int(2, 12));
        const int r = static_cast<int>(rng.uniform_int(1, 6));
        const auto f = random_features(n, m, rng);
        const auto params = random_params(r, m, rng);

        const auto got = stage2::attention_pool(params, f);
        const auto expected = attention_oracle(params, f);

        double sum = 0.0;
        for (int k = 0; k < n; ++k) {
            CHECK(got.weights[k] >= 0.0);
            CHECK(got.weights[k] == doctest::Approx(expected.weights[k]).epsilon(1e-9));
            sum += got.weights[k];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        for (int j = 0; j < m; ++j)
            CHECK(got.bag[j] == doctest::Approx(expected.bag[j]).epsilon(1e-9));

        // convexity: each bag coordinate lies within the feature range
        for (int j = 0; j < m; ++j) {
            double lo = f.row(0)[j], hi = f.row(0)[j];
            for (int k = 1; k < n; ++k) {
                lo = std::min(lo, f.row(k)[j]);
                hi = std::max(hi, f.row(k)[j]);
            }
            CHECK(got.bag[j] >= lo - 1e-12);
            CHECK(got.bag[j] <= hi + 1e-12);
        }
    }
}

TEST_CASE("attention logits are shift-invariant") {
    // adding a constant to all logits leaves the softmax unchanged; emulate
    // by scaling w and checking against the oracle instead: the stabilized
    // implementation must agree with the raw formula even for large logits
    Rng rng(23);
    auto params = random_params(3, 6, rng);
    for (auto& v : params.w) v *= 200.0;   // pushes raw exp toward overflow
    const auto f = random_features(5, 6, rng);
    const auto got = stage2::attention_pool(params, f);
    double sum = 0.0;
    for (double a : got.weights) {
        CHECK(std::isfinite(a));
        sum += a;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("encode_sequence: shapes, determinism, order sensitivity") {
    auto settings = tiny_settings();
    const auto model = stage2::make_stage2(settings);
    Rng rng(9);

    std::vector<double> emb(static_cast<size_t>(4) * settings.d);
    for (auto& v : emb) v = rng.uniform(-1.0, 1.0);

    const auto f1 = stage2::encode_sequence(model, emb, 4, settings.d);
    CHECK(f1.n == 4);
    CHECK(f1.m == settings.m);
    const auto f2 = stage2::encode_sequence(model, emb, 4, settings.d);
    CHECK(f1.values == f2.values);

    // single-slice sequences are valid
    std::vector<double> one(emb.begin(), emb.begin() + settings.d);
    const auto fs = stage2::encode_sequence(model, one, 1, settings.d);
    CHECK(fs.n == 1);

    // reversing the slice order changes the features (bidirectional encoder)
    std::vector<double> rev(emb.size());
    for (int k = 0; k < 4; ++k)
        std::copy_n(emb.data() + static_cast<size_t>(3 - k) * settings.d, settings.d,
                    rev.data() + static_cast<size_t>(k) * settings.d);
    const auto fr = stage2::encode_sequence(model, rev, 4, settings.d);
    double diff = 0.0;
    for (size_t i = 0; i < f1.values.size(); ++i) diff += std::abs(f1.values[i] - fr.values[i]);
    CHECK(diff > 1e-6);

    CHECK_THROWS_AS(stage2::encode_sequence(model, emb, 0, settings.d), Error);
    CHECK_THROWS_AS(stage2::encode_sequence(model, emb, 4, settings.d + 1), Error);
}

TEST_CASE("predict_study: contract and determinism") {
    auto settings = tiny_settings();
    const auto model = stage2::make_stage2(settings);
    Rng rng(13);
    std::vector<double> emb(static_cast<size_t>(5) * settings.d);
    for (auto& v : emb) v = rng.uniform(-1.0, 1.0);

    const auto pred = stage2::predict_study(model, emb, 5, settings.d);
    CHECK(pred.preds.image_probs.size() == 5);
    for (double p : pred.preds.image_probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    for (double p : pred.preds.study_probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    double sum = 0.0;
    for (double a : pred.attention.weights) sum += a;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    const auto again = stage2::predict_study(model, emb, 5, settings.d);
    CHECK(pred.preds.image_probs == again.preds.image_probs);
    CHECK(pred.preds.study_probs == again.preds.study_probs);
}

TEST_CASE("fixed-seed model and input produce the pinned prediction snapshot") {
    // golden values produced once from this implementation
    auto settings = tiny_settings();   // seed 3, d=6, h=5, m=8, r=4
    const auto model = stage2::make_stage2(settings);
    Rng rng(77);
    std::vector<double> emb(static_cast<size_t>(4) * settings.d);
    for (auto& v : emb) v = rng.uniform(-1.0, 1.0);
    const auto pred = stage2::predict_study(model, emb, 4, settings.d);
    CHECK(pred.preds.study_probs[0] == doctest::Approx(0.523744283649859).epsilon(1e-9));
    CHECK(pred.preds.study_probs[8] == doctest::Approx(0.471921769511159).epsilon(1e-9));
    CHECK(pred.preds.image_probs[0] == doctest::Approx(0.559489775910396).epsilon(1e-9));
    CHECK(pred.attention.weights[0] == doctest::Approx(0.268709034698559).epsilon(1e-9));
}

TEST_CASE("full analytic gradients match central finite differences (n=3, m=8, r=4)") {
    auto settings = tiny_settings();   // m=8, r=4
    const auto model = stage2::make_stage2(settings);
    const auto studies = toy_feature_studies(1, 3, settings.d, 21);
    const auto& study = studies[0];
    loss::LabelWeights weights;

    stage2::Stage2Grads grads(model);
    stage2::study_loss_and_grads(model, study, weights, grads);

    auto loss_with = [&](const stage2::Stage2Model& m2) {
        stage2::Stage2Grads scratch(m2);
        return stage2::study_loss_and_grads(m2, study, weights, scratch);
    };

    // every tensor gets a few probes
    struct Probe {
        const char* name;
        std::vector<double> stage2::Stage2Model::* param;
        std::vector<double> stage2::Stage2Grads::* grad;
    };
    const std::vector<Probe> probes = {
        {"fwd_wx", &stage2::Stage2Model::fwd_wx, &stage2::Stage2Grads::fwd_wx},
        {"fwd_wh", &stage2::Stage2Model::fwd_wh, &stage2::Stage2Grads::fwd_wh},
        {"fwd_b", &stage2::Stage2Model::fwd_b, &stage2::Stage2Grads::fwd_b},
        {"bwd_wx", &stage2::Stage2Model::bwd_wx, &stage2::Stage2Grads::bwd_wx},
        {"bwd_wh", &stage2::Stage2Model::bwd_wh, &stage2::Stage2Grads::bwd_wh},
        {"bwd_b", &stage2::Stage2Model::bwd_b, &stage2::Stage2Grads::bwd_b},
        {"dense_w", &stage2::Stage2Model::dense_w, &stage2::Stage2Grads::dense_w},
        {"dense_b", &stage2::Stage2Model::dense_b, &stage2::Stage2Grads::dense_b},
        {"img_w", &stage2::Stage2Model::img_w, &stage2::Stage2Grads::img_w},
        {"study_w", &stage2::Stage2Model::study_w, &stage2::Stage2Grads::study_w},
        {"study_b", &stage2::Stage2Model::study_b, &stage2::Stage2Grads::study_b},
    };
    const double h = 1e-6;
    for (const auto& probe : probes) {
        const auto& gvec = grads.*(probe.grad);
        const size_t count = (model.*(probe.param)).size();
        const size_t step = std::max<size_t>(1, count / 5);
        for (size_t i = 0; i < count; i += step) {
            auto m_up = model;
            (m_up.*(probe.param))[i] += h;
            auto m_dn = model;
            (m_dn.*(probe.param))[i] -= h;
            const double fd = (loss_with(m_up) - loss_with(m_dn)) / (2 * h);
            if (std::abs(gvec[i] - fd) < 1e-8) continue;   // FD roundoff floor
            INFO(probe.name << "[" << i << "]");
            CHECK(gvec[i] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("attention parameter gradients match finite differences at rel 1e-4") {
    auto settings = tiny_settings();
    const auto model = stage2::make_stage2(settings);
    const auto studies = toy_feature_studies(1, 3, settings.d, 77);
    loss::LabelWeights weights;

    stage2::Stage2Grads grads(model);
    stage2::study_loss_and_grads(model, studies[0], weights, grads);

    auto loss_with = [&](const stage2::Stage2Model& m2) {
        stage2::Stage2Grads scratch(m2);
        return stage2::study_loss_and_grads(m2, studies[0], weights, scratch);
    };
    const double h = 1e-6;
    for (size_t i = 0; i < model.attn.v.size(); ++i) {
        auto up = model, dn = model;
        up.attn.v[i] += h;
        dn.attn.v[i] -= h;
        const double fd = (loss_with(up) - loss_with(dn)) / (2 * h);
        if (std::abs(grads.attn_v[i] - fd) < 1e-8) continue;   // FD roundoff floor
        CHECK(grads.attn_v[i] == doctest::Approx(fd).epsilon(1e-4));
    }
    for (size_t i = 0; i < model.attn.w.size(); ++i) {
        auto up = model, dn = model;
        up.attn.w[i] += h;
        dn.attn.w[i] -= h;
        const double fd = (loss_with(up) - loss_with(dn)) / (2 * h);
        if (std::abs(grads.attn_w[i] - fd) < 1e-8) continue;   // FD roundoff floor
        CHECK(grads.attn_w[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("overfit smoke test: 300 epochs on 8 studies cut the loss below 25%") {
    auto settings = tiny_settings();
    settings.epochs = 300;
    settings.lr = 3e-3;
    const auto studies = toy_feature_studies(8, 6, settings.d, 5);

    const auto result = stage2::train_stage2(studies, {}, settings);
    REQUIRE(result.log.size() == 300);
    CHECK(result.log.back().train_loss < 0.25 * result.log.front().train_loss);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto settings = tiny_settings();
    settings.epochs = 10;
    const auto studies = toy_feature_studies(4, 5, settings.d, 8);

    const auto a = stage2::train_stage2(studies, {studies[0]}, settings);
    const auto b = stage2::train_stage2(studies, {studies[0]}, settings);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(std::abs(a.log[i].train_loss - b.log[i].train_loss) < 1e-6);
        CHECK(std::abs(a.log[i].val_loss - b.log[i].val_loss) < 1e-6);
    }
}

TEST_CASE("empty feature caches are rejected") {
    auto settings = tiny_settings();
    stage2::FeatureStudy bad;
    bad.study_id = "bad";
    bad.n = 0;
    bad.d = settings.d;
    bad.labels.study[labels::kLeftsided] = 1;
    CHECK_THROWS_AS(stage2::train_stage2({bad}, {}, settings), Error);
}

TEST_CASE("after training, attention weights concentrate on planted positive slices") {
    auto settings = tiny_settings();
    settings.epochs = 120;
    settings.lr = 3e-3;
    const auto train = toy_feature_studies(12, 8, settings.d, 31);
    const auto result = stage2::train_stage2(train, {}, settings);

    const auto held_out = toy_feature_studies(6, 8, settings.d, 99);
    double pos_sum = 0.0, neg_sum = 0.0;
    int pos_count = 0, neg_count = 0;
    for (const auto& s : held_out) {
        if (!s.labels.any_image_positive()) continue;
        const auto pred = stage2::predict_study(result.model, s.embeddings, s.n, s.d);
        for (int k = 0; k < s.n; ++k) {
            if (s.labels.image_pe[k]) {
                pos_sum += pred.attention.weights[k];
                ++pos_count;
            } else {
                neg_sum += pred.attention.weights[k];
                ++neg_count;
            }
        }
    }
    REQUIRE(pos_count > 0);
    REQUIRE(neg_count > 0);
    CHECK(pos_sum / pos_count > neg_sum / neg_count);
}

TEST_CASE("stage2 checkpoints round-trip through disk") {
    const auto settings = tiny_settings();
    const auto model = stage2::make_stage2(settings);
    const fs::path path = fs::temp_directory_path() / "ctpe_stage2_test.ckpt";
    ckpt::save_stage2(path, model, {"cfg\n", 5, 6});
    const auto loaded = ckpt::load_stage2(path);
    CHECK(loaded.d == model.d);
    CHECK(loaded.fwd_wx == model.fwd_wx);
    CHECK(loaded.attn.v == model.attn.v);
    CHECK(loaded.img_b == model.img_b);
    CHECK(loaded.pooling == model.pooling);
    CHECK(ckpt::params_hash(loaded) == ckpt::params_hash(model));
    fs::remove(path);
}
