#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace ctpe {

// Adam with bias correction and optional global gradient-norm clipping; one
// instance per model, one slot per tensor. Callers accumulate the squared
// norm over all gradient tensors, then pass it to begin_step.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps, double clip = 0.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip) {}

    void begin_step(double grad_sq_norm = 0.0) {
        ++t_;
        scale_ = 1.0;
        if (clip_ > 0.0 && grad_sq_norm > clip_ * clip_)
            scale_ = clip_ / std::sqrt(grad_sq_norm);
    }

    static double sq_norm(const std::vector<double>& g) {
        double sq = 0.0;
        for (double v : g) sq += v * v;
        return sq;
    }

    void update(size_t slot, std::vector<double>& params, const std::vector<double>& grads) {
        if (slots_.size() <= slot) slots_.resize(slot + 1);
        auto& s = slots_[slot];
        if (s.m.size() != params.size()) {
            s.m.assign(params.size(), 0.0);
            s.v.assign(params.size(), 0.0);
        }
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i] * scale_;
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    double clip_;
    double scale_ = 1.0;
    long t_ = 0;
    std::vector<Slot> slots_;
};

} // namespace ctpe
