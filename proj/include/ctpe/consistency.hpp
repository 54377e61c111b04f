#pragma once

#include <array>
#include <string>
#include <vector>

#include "ctpe/labels.hpp"

namespace ctpe::consistency {

// A label counts as predicted iff p > 0.5 (strict).
inline constexpr double kThreshold = 0.5;
// Margin used by enforce() to clear the threshold unambiguously.
inline constexpr double kDelta = 1e-3;

struct PredictionSet {
    std::vector<double> image_probs;                       // per-slice PE probability
    std::array<double, labels::kNumStudyLabels> study_probs{};

    bool image_positive() const {
        for (double p : image_probs)
            if (p > kThreshold) return true;
        return false;
    }
};

struct Rule {
    std::string id;
    std::string description;
};

// The shipped rule set, in evaluation order.
const std::vector<Rule>& rule_set();

struct Violation {
    std::string rule_id;
    std::string description;
    std::string offending_values;
};

struct ConsistencyReport {
    std::vector<Violation> violations;
    bool is_consistent() const { return violations.empty(); }
};

ConsistencyReport validate(const PredictionSet& preds);

// Minimal-change repair: only labels implicated in a violated rule move, by
// the smallest edit that clears the threshold (argmax kept for "at least
// one" rules, max kept for "at most one" rules, ties broken by canonical
// label order). Image probabilities are never modified. Idempotent.
PredictionSet enforce(const PredictionSet& preds);

} // namespace ctpe::consistency
