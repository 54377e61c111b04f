#include "ctpe/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ctpe/error.hpp"
#include "ctpe/kernels.hpp"
#include "ctpe/rng.hpp"

namespace ctpe::evaluate {

ROCResult roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size())
        throw contract_error("roc_auc: label/score count mismatch");
    ROCResult out;
    for (int y : labels) (y ? out.n_pos : out.n_neg)++;
    if (out.n_pos == 0 || out.n_neg == 0)
        throw data_error("undefined AUC: split contains a single class (" +
                         std::to_string(out.n_pos) + " positives, " + std::to_string(out.n_neg) +
                         " negatives)");

    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    out.thresholds.push_back(std::numeric_limits<double>::infinity());
    out.fpr.push_back(0.0);
    out.tpr.push_back(0.0);

    long tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        // consume the whole tie group before emitting a point
        while (i < order.size() && scores[order[i]] == s) {
            if (labels[order[i]]) ++tp; else ++fp;
            ++i;
        }
        out.thresholds.push_back(s);
        out.fpr.push_back(static_cast<double>(fp) / out.n_neg);
        out.tpr.push_back(static_cast<double>(tp) / out.n_pos);
    }

    double auc = 0.0;
    for (size_t k = 1; k < out.fpr.size(); ++k)
        auc += (out.fpr[k] - out.fpr[k - 1]) * (out.tpr[k] + out.tpr[k - 1]) * 0.5;
    out.auc = auc;
    return out;
}

ActivationMap compute_cam(const stage1::Stage1Model& model, const float* windowed, int h, int w) {
    const auto maps = stage1::final_feature_maps(model, windowed, h, w);

    ActivationMap cam;
    cam.map_h = maps.h;
    cam.map_w = maps.w;
    cam.heat.assign(static_cast<size_t>(maps.h) * maps.w, 0.0);
    for (int c = 0; c < maps.channels; ++c) {
        const double* plane = maps.maps.data() + static_cast<size_t>(c) * maps.h * maps.w;
        for (size_t i = 0; i < cam.heat.size(); ++i) cam.heat[i] += plane[i];
    }
    for (double& v : cam.heat) v = std::max(0.0, v / maps.channels);

    cam.out_h = h;
    cam.out_w = w;
    cam.overlay.resize(static_cast<size_t>(h) * w);
    kernels::bilinear_upsample(cam.heat.data(), cam.map_h, cam.map_w, cam.overlay.data(), h, w);
    const double peak = *std::max_element(cam.overlay.begin(), cam.overlay.end());
    if (peak > 0.0)
        for (double& v : cam.overlay) v /= peak;
    return cam;
}

// ---------------------------------------------------------------------------
// 2-D embeddings

namespace {

std::vector<double> center_rows(const std::vector<std::vector<double>>& bags, size_t dim) {
    std::vector<double> x(bags.size() * dim);
    std::vector<double> mean(dim, 0.0);
    for (const auto& b : bags)
        for (size_t j = 0; j < dim; ++j) mean[j] += b[j];
    for (double& v : mean) v /= static_cast<double>(bags.size());
    for (size_t i = 0; i < bags.size(); ++i)
        for (size_t j = 0; j < dim; ++j) x[i * dim + j] = bags[i][j] - mean[j];
    return x;
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& bags,
                                          uint64_t seed) {
    const size_t S = bags.size(), dim = bags[0].size();
    const auto x = center_rows(bags, dim);
    Rng rng(seed);

    std::vector<std::vector<double>> components;
    std::vector<double> v(dim), xv(S), next(dim);
    for (int comp = 0; comp < 2; ++comp) {
        for (auto& e : v) e = rng.normal();
        for (int iter = 0; iter < 100; ++iter) {
            // next = X^T X v, with previous components projected out
            for (size_t i = 0; i < S; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < dim; ++j) acc += x[i * dim + j] * v[j];
                xv[i] = acc;
            }
            std::fill(next.begin(), next.end(), 0.0);
            for (size_t i = 0; i < S; ++i)
                for (size_t j = 0; j < dim; ++j) next[j] += x[i * dim + j] * xv[i];
            for (const auto& prev : components) {
                double dot = 0.0;
                for (size_t j = 0; j < dim; ++j) dot += next[j] * prev[j];
                for (size_t j = 0; j < dim; ++j) next[j] -= dot * prev[j];
            }
            double norm = 0.0;
            for (double e : next) norm += e * e;
            norm = std::sqrt(norm);
            if (norm < 1e-300) break;
            for (size_t j = 0; j < dim; ++j) v[j] = next[j] / norm;
        }
        components.push_back(v);
    }

    std::vector<std::array<double, 2>> out(S);
    for (size_t i = 0; i < S; ++i)
        for (int comp = 0; comp < 2; ++comp) {
            double acc = 0.0;
            for (size_t j = 0; j < dim; ++j) acc += x[i * dim + j] * components[comp][j];
            out[i][comp] = acc;
        }
    return out;
}

std::vector<std::array<double, 2>> tsne_2d(const std::vector<std::vector<double>>& bags,
                                           uint64_t seed) {
    const size_t S = bags.size(), dim = bags[0].size();
    const double perplexity = std::max(2.0, std::min(30.0, (static_cast<double>(S) - 1.0) / 3.0));

    std::vector<double> d2(S * S, 0.0);
    for (size_t i = 0; i < S; ++i)
        for (size_t j = i + 1; j < S; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < dim; ++k) {
                const double diff = bags[i][k] - bags[j][k];
                acc += diff * diff;
            }
            d2[i * S + j] = d2[j * S + i] = acc;
        }

    // per-point precision via binary search on the entropy
    std::vector<double> p(S * S, 0.0);
    const double target = std::log(perplexity);
    for (size_t i = 0; i < S; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 64; ++iter) {
            double sum = 0.0, dot = 0.0;
            for (size_t j = 0; j < S; ++j) {
                if (j == i) continue;
                const double pj = std::exp(-beta * d2[i * S + j]);
                p[i * S + j] = pj;
                sum += pj;
                dot += pj * d2[i * S + j];
            }
            if (sum <= 0.0) { beta /= 2.0; beta_hi = beta * 2.0; continue; }
            const double entropy = std::log(sum) + beta * dot / sum;
            if (std::abs(entropy - target) < 1e-5) break;
            if (entropy > target) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
            } else {
                beta_hi = beta;
                beta = (beta + beta_lo) / 2.0;
            }
        }
        double sum = 0.0;
        for (size_t j = 0; j < S; ++j) sum += (j == i) ? 0.0 : p[i * S + j];
        for (size_t j = 0; j < S; ++j)
            if (j != i) p[i * S + j] /= sum;
    }
    // symmetrize
    for (size_t i = 0; i < S; ++i)
        for (size_t j = i + 1; j < S; ++j) {
            const double v = std::max((p[i * S + j] + p[j * S + i]) / (2.0 * S), 1e-12);
            p[i * S + j] = p[j * S + i] = v;
        }

    Rng rng(seed);
    std::vector<std::array<double, 2>> y(S), grad(S), vel(S);
    for (auto& pt : y) pt = {rng.normal() * 1e-2, rng.normal() * 1e-2};
    for (auto& pt : vel) pt = {0.0, 0.0};

    const int iters = 500;
    const double lr = 100.0;
    std::vector<double> q(S * S);
    for (int iter = 0; iter < iters; ++iter) {
        const double exaggeration = iter < 100 ? 12.0 : 1.0;
        const double momentum = iter < 250 ? 0.5 : 0.8;

        double qsum = 0.0;
        for (size_t i = 0; i < S; ++i)
            for (size_t j = i + 1; j < S; ++j) {
                const double dx = y[i][0] - y[j][0];
                const double dy = y[i][1] - y[j][1];
                const double t = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * S + j] = q[j * S + i] = t;
                qsum += 2.0 * t;
            }

        for (size_t i = 0; i < S; ++i) {
            grad[i] = {0.0, 0.0};
            for (size_t j = 0; j < S; ++j) {
                if (j == i) continue;
                const double t = q[i * S + j];
                const double coeff = 4.0 * (exaggeration * p[i * S + j] - t / qsum) * t;
                grad[i][0] += coeff * (y[i][0] - y[j][0]);
                grad[i][1] += coeff * (y[i][1] - y[j][1]);
            }
        }
        for (size_t i = 0; i < S; ++i)
            for (int c = 0; c < 2; ++c) {
                vel[i][c] = momentum * vel[i][c] - lr * grad[i][c];
                y[i][c] += vel[i][c];
            }
    }
    return y;
}

} // namespace

std::vector<std::array<double, 2>> embed_bags_2d(const std::vector<std::vector<double>>& bags,
                                                 uint64_t seed, const std::string& method) {
    if (bags.size() < 2)
        throw contract_error("embed_bags_2d: need at least 2 bags, got " +
                             std::to_string(bags.size()));
    for (const auto& b : bags)
        if (b.size() != bags[0].size())
            throw contract_error("embed_bags_2d: inconsistent bag dimensions");
    if (method == "pca") return pca_2d(bags, seed);
    if (method == "tsne") return tsne_2d(bags, seed);
    throw usage_error("unknown 2-D embedding method '" + method + "' (expected tsne or pca)");
}

// ---------------------------------------------------------------------------

MetricsReport evaluate_records(const std::vector<StudyRecord>& records) {
    if (records.empty()) throw contract_error("evaluate_records: no studies");
    MetricsReport report;

    for (const auto& rec : records) {
        consistency::PredictionSet preds;
        preds.image_probs = rec.image_probs;
        preds.study_probs = rec.study_probs;
        report.consistency_violations +=
            static_cast<int>(consistency::validate(preds).violations.size());
    }

    auto add_row = [&](const std::string& label, const std::vector<int>& y,
                       const std::vector<double>& s) {
        MetricsRow row;
        row.label = label;
        try {
            ROCResult roc = roc_auc(y, s);
            roc.label = label;
            row.auc = roc.auc;
            row.n_pos = roc.n_pos;
            row.n_neg = roc.n_neg;
            report.curves.push_back(std::move(roc));
        } catch (const Error&) {
            row.skipped = true;
            for (int v : y) (v ? row.n_pos : row.n_neg)++;
            row.note = "single-class";
        }
        report.rows.push_back(std::move(row));
        return !report.rows.back().skipped;
    };

    std::vector<int> y;
    std::vector<double> s;
    for (int j = 0; j < labels::kNumStudyLabels; ++j) {
        y.clear();
        s.clear();
        for (const auto& rec : records) {
            y.push_back(rec.truth.study[j]);
            s.push_back(rec.study_probs[j]);
        }
        add_row(labels::study_label_name(j), y, s);
    }

    // derived PE-presence row
    y.clear();
    s.clear();
    for (const auto& rec : records) {
        y.push_back(1 - rec.truth.study[labels::kNegativeForPe]);
        s.push_back(1.0 - rec.study_probs[labels::kNegativeForPe]);
    }
    if (!add_row("pe_present", y, s))
        throw data_error("undefined AUC: PE presence is single-class in this split");

    // pooled image-level row, when per-slice truth exists
    y.clear();
    s.clear();
    for (const auto& rec : records) {
        if (!rec.has_image_truth) continue;
        for (size_t k = 0; k < rec.image_probs.size(); ++k) {
            y.push_back(rec.truth.image_pe[k]);
            s.push_back(rec.image_probs[k]);
        }
    }
    if (!y.empty()) add_row("image_pe", y, s);

    return report;
}

std::string format_metrics_csv(const MetricsReport& report) {
    std::ostringstream ss;
    ss << "label,auc,n_pos,n_neg\n";
    ss.precision(6);
    ss.setf(std::ios::fixed);
    for (const auto& row : report.rows) {
        if (row.skipped)
            ss << row.label << ",skipped(" << row.note << ")," << row.n_pos << "," << row.n_neg << "\n";
        else
            ss << row.label << "," << row.auc << "," << row.n_pos << "," << row.n_neg << "\n";
    }
    ss << "consistency_violations," << report.consistency_violations << ",,\n";
    return ss.str();
}

} // namespace ctpe::evaluate
