#include <doctest.h>

#include <cmath>
#include <vector>

#include "ctpe/error.hpp"
#include "ctpe/evaluate.hpp"
#include "ctpe/rng.hpp"
#include "ctpe/stage1.hpp"

using namespace ctpe;

namespace {

// O(n^2) pairwise Mann-Whitney with half-credit ties
double mann_whitney(const std::vector<int>& y, const std::vector<double>& s) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (!y[i]) continue;
        for (size_t j = 0; j < y.size(); ++j) {
            if (y[j]) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

double silhouette(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& cluster) {
    auto dist = [&](size_t i, size_t j) {
        const double dx = pts[i][0] - pts[j][0];
        const double dy = pts[i][1] - pts[j][1];
        return std::sqrt(dx * dx + dy * dy);
    };
    double total = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        double a = 0.0, b = 0.0;
        int na = 0, nb = 0;
        for (size_t j = 0; j < pts.size(); ++j) {
            if (j == i) continue;
            if (cluster[j] == cluster[i]) {
                a += dist(i, j);
                ++na;
            } else {
                b += dist(i, j);
                ++nb;
            }
        }
        a /= na;
        b /= nb;
        total += (b - a) / std::max(a, b);
    }
    return total / pts.size();
}

} // namespace

TEST_CASE("roc_auc: separable, tied, and degenerate inputs") {
    CHECK(evaluate::roc_auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}).auc == doctest::Approx(1.0));
    CHECK(evaluate::roc_auc({1, 1, 0, 0}, {0.1, 0.2, 0.8, 0.9}).auc == doctest::Approx(0.0));
    CHECK(evaluate::roc_auc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}).auc == doctest::Approx(0.5));
    CHECK_THROWS_AS(evaluate::roc_auc({1, 1, 1}, {0.1, 0.2, 0.3}), Error);
    CHECK_THROWS_AS(evaluate::roc_auc({0, 0}, {0.1, 0.2}), Error);
}

TEST_CASE("roc curve endpoints and monotonicity") {
    Rng rng(12);
    std::vector<int> y;
    std::vector<double> s;
    for (int i = 0; i < 50; ++i) {
        y.push_back(rng.bernoulli(0.4));
        s.push_back(rng.uniform_int(0, 9) / 10.0);   // plenty of ties
    }
    const auto roc = evaluate::roc_auc(y, s);
    CHECK(roc.fpr.front() == 0.0);
    CHECK(roc.tpr.front() == 0.0);
    CHECK(roc.fpr.back() == doctest::Approx(1.0));
    CHECK(roc.tpr.back() == doctest::Approx(1.0));
    for (size_t i = 1; i < roc.fpr.size(); ++i) {
        CHECK(roc.fpr[i] >= roc.fpr[i - 1]);
        CHECK(roc.tpr[i] >= roc.tpr[i - 1]);
        CHECK(roc.thresholds[i] < roc.thresholds[i - 1]);
    }
}

TEST_CASE("roc_auc equals the pairwise oracle, including tied scores") {
    Rng rng(777);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(5, 40));
        std::vector<int> y(n);
        std::vector<double> s(n);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(0.5);
            (y[i] ? has_pos : has_neg) = true;
            // quantized scores force tie groups
            s[i] = rng.uniform_int(0, 12) / 12.0;
        }
        if (!has_pos || !has_neg) continue;
        const auto roc = evaluate::roc_auc(y, s);
        CHECK(roc.auc == doctest::Approx(mann_whitney(y, s)).epsilon(1e-12));
    }
}

TEST_CASE("auc is invariant under strictly monotone score transforms") {
    Rng rng(31);
    std::vector<int> y;
    std::vector<double> s;
    for (int i = 0; i < 60; ++i) {
        y.push_back(rng.bernoulli(0.5));
        s.push_back(rng.uniform(0.01, 0.99));
    }
    y[0] = 1;
    y[1] = 0;
    const double base = evaluate::roc_auc(y, s).auc;
    auto t1 = s, t2 = s;
    for (auto& v : t1) v = std::log(v / (1 - v));      // logit
    for (auto& v : t2) v = 3.0 * v * v * v + 7.0;      // cubic + shift
    CHECK(evaluate::roc_auc(y, t1).auc == doctest::Approx(base).epsilon(1e-12));
    CHECK(evaluate::roc_auc(y, t2).auc == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("compute_cam: nonnegative, near-constant on constant input") {
    stage1::Stage1Settings settings;
    settings.backbone = "conv3";
    settings.d = 16;
    settings.input_h = 32;
    settings.input_w = 32;
    settings.seed = 4;
    const auto model = stage1::make_stage1(settings);

    // constant-zero input with zero biases: activations vanish, so the map
    // is spatially flat
    const std::vector<float> zeros(3 * 32 * 32, 0.0f);
    const auto cam0 = evaluate::compute_cam(model, zeros.data(), 32, 32);
    CHECK(cam0.out_h == 32);
    CHECK(cam0.out_w == 32);
    double mean = 0.0;
    for (double v : cam0.heat) {
        CHECK(v >= 0.0);
        mean += v;
    }
    mean /= cam0.heat.size();
    double var = 0.0;
    for (double v : cam0.heat) var += (v - mean) * (v - mean);
    var /= cam0.heat.size();
    CHECK(var <= 1e-3 * mean + 1e-12);

    // any input: rectified map and unit-range overlay
    const std::vector<float> flat(3 * 32 * 32, 0.4f);
    const auto cam = evaluate::compute_cam(model, flat.data(), 32, 32);
    for (double v : cam.heat) CHECK(v >= 0.0);
    for (double v : cam.overlay) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("embed_bags_2d: contract, determinism, cluster separation") {
    Rng rng(55);
    std::vector<std::vector<double>> bags;
    std::vector<int> cluster;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> b(10);
        const bool second = i % 2 == 1;
        for (auto& v : b) v = rng.normal(second ? 8.0 : 0.0, 0.5);
        bags.push_back(std::move(b));
        cluster.push_back(second ? 1 : 0);
    }

    for (const std::string method : {"tsne", "pca"}) {
        const auto a = evaluate::embed_bags_2d(bags, 123, method);
        const auto b = evaluate::embed_bags_2d(bags, 123, method);
        REQUIRE(a.size() == bags.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i][0] == b[i][0]);
            CHECK(a[i][1] == b[i][1]);
        }
        CHECK(silhouette(a, cluster) > 0.5);
    }

    const auto two = evaluate::embed_bags_2d({{1.0, 2.0}, {5.0, 9.0}}, 7, "pca");
    CHECK((two[0][0] != two[1][0] || two[0][1] != two[1][1]));

    CHECK_THROWS_AS(evaluate::embed_bags_2d({{1.0}}, 7, "pca"), Error);
    CHECK_THROWS_AS(evaluate::embed_bags_2d(bags, 7, "umap"), Error);
}

TEST_CASE("evaluate_records: perfect and constant predictors") {
    std::vector<evaluate::StudyRecord> records;
    for (int i = 0; i < 10; ++i) {
        evaluate::StudyRecord r;
        r.study_id = "r" + std::to_string(i);
        const bool pos = i % 2 == 0;
        r.truth.image_pe.assign(4, 0);
        if (pos) {
            r.truth.image_pe[1] = 1;
            r.truth.study[labels::kLeftsided] = 1;
            r.truth.study[labels::kRvlvLt1] = 1;
        } else {
            r.truth.study[labels::kNegativeForPe] = 1;
        }
        for (int j = 0; j < labels::kNumStudyLabels; ++j)
            r.study_probs[j] = r.truth.study[j] ? 0.9 : 0.1;
        r.image_probs = {0.1, pos ? 0.9 : 0.1, 0.1, 0.1};
        records.push_back(std::move(r));
    }

    const auto report = evaluate::evaluate_records(records);
    CHECK(report.consistency_violations == 0);
    int checked = 0;
    for (const auto& row : report.rows) {
        if (row.skipped) continue;
        CHECK(row.auc == doctest::Approx(1.0));
        ++checked;
    }
    CHECK(checked >= 5);   // negative_for_pe, leftsided, rvlv_lt_1, pe_present, image_pe

    bool chronic_skipped = false;
    for (const auto& row : report.rows)
        if (row.label == "chronic") chronic_skipped = row.skipped;
    CHECK(chronic_skipped);   // no chronic positives in this split

    // constant predictor: every AUC that exists is 0.5
    auto flat = records;
    for (auto& r : flat) {
        r.study_probs.fill(0.2);
        r.study_probs[labels::kNegativeForPe] = 0.7;   // keep consistency: negative branch
        for (auto& p : r.image_probs) p = 0.3;
    }
    const auto flat_report = evaluate::evaluate_records(flat);
    for (const auto& row : flat_report.rows)
        if (!row.skipped) CHECK(row.auc == doctest::Approx(0.5));

    // single-class PE presence is an explicit error
    auto single = records;
    for (auto& r : single) {
        r.truth.study.fill(0);
        r.truth.study[labels::kNegativeForPe] = 1;
        r.truth.image_pe.assign(4, 0);
    }
    CHECK_THROWS_AS(evaluate::evaluate_records(single), Error);
}

TEST_CASE("metrics csv formatting") {
    evaluate::MetricsReport report;
    report.rows.push_back({"pe_present", false, "", 0.9876, 8, 12});
    report.rows.push_back({"chronic", true, "single-class", 0.0, 0, 20});
    const auto csv = evaluate::format_metrics_csv(report);
    CHECK(csv.find("label,auc,n_pos,n_neg") != std::string::npos);
    CHECK(csv.find("pe_present,0.9876") != std::string::npos);
    CHECK(csv.find("chronic,skipped(single-class),0,20") != std::string::npos);
    CHECK(csv.find("consistency_violations,0") != std::string::npos);
}
