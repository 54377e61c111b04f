#include "ctpe/consistency.hpp"

#include <algorithm>
#include <sstream>

namespace ctpe::consistency {

using namespace ctpe::labels;

namespace {

constexpr std::array<int, 3> kLaterality = {kLeftsided, kRightsided, kCentral};
constexpr std::array<int, 2> kRvlv = {kRvlvGte1, kRvlvLt1};
constexpr std::array<int, 2> kChronicity = {kChronic, kAcuteAndChronic};
constexpr std::array<int, 2> kPeStatus = {kNegativeForPe, kIndeterminate};
constexpr std::array<int, 5> kPositiveStudyLabels = {kLeftsided, kRightsided, kCentral,
                                                     kRvlvGte1, kRvlvLt1};

std::string values_str(const PredictionSet& p, const int* idx, size_t n) {
    std::ostringstream ss;
    for (size_t i = 0; i < n; ++i) {
        if (i) ss << " ";
        ss << kStudyLabelNames[idx[i]] << "=" << p.study_probs[idx[i]];
    }
    return ss.str();
}

template <size_t N>
int count_predicted(const PredictionSet& p, const std::array<int, N>& idx) {
    int c = 0;
    for (int i : idx)
        if (p.study_probs[i] > kThreshold) ++c;
    return c;
}

// argmax over a label group, ties broken toward the earliest canonical index
template <size_t N>
int group_argmax(const PredictionSet& p, const std::array<int, N>& idx) {
    int best = idx[0];
    for (int i : idx)
        if (p.study_probs[i] > p.study_probs[best]) best = i;
    return best;
}

} // namespace

const std::vector<Rule>& rule_set() {
    static const std::vector<Rule> rules = {
        {"R1", "PE-positive study: at least one of leftsided/rightsided/central must exceed 0.5"},
        {"R2", "PE-positive study: exactly one of rvlv_gte_1/rvlv_lt_1 must exceed 0.5"},
        {"R3", "chronic and acute_and_chronic cannot both exceed 0.5"},
        {"R4", "PE-negative study: exactly one of negative_for_pe/indeterminate must exceed 0.5; "
               "PE-positive study: neither may exceed 0.5"},
        {"R5", "PE-negative study: leftsided/rightsided/central/rvlv_gte_1/rvlv_lt_1 must all be at most 0.5"},
    };
    return rules;
}

ConsistencyReport validate(const PredictionSet& preds) {
    ConsistencyReport report;
    auto add = [&](const char* id, const std::string& desc, const std::string& vals) {
        report.violations.push_back({id, desc, vals});
    };

    if (preds.image_positive()) {
        if (count_predicted(preds, kLaterality) == 0)
            add("R1", "no laterality label exceeds 0.5 on a PE-positive study",
                values_str(preds, kLaterality.data(), kLaterality.size()));
        if (count_predicted(preds, kRvlv) != 1)
            add("R2", "not exactly one RV/LV label exceeds 0.5 on a PE-positive study",
                values_str(preds, kRvlv.data(), kRvlv.size()));
        if (count_predicted(preds, kChronicity) == 2)
            add("R3", "chronic and acute_and_chronic both exceed 0.5",
                values_str(preds, kChronicity.data(), kChronicity.size()));
        if (count_predicted(preds, kPeStatus) > 0)
            add("R4", "negative_for_pe/indeterminate exceeds 0.5 on a PE-positive study",
                values_str(preds, kPeStatus.data(), kPeStatus.size()));
    } else {
        if (count_predicted(preds, kPeStatus) != 1)
            add("R4", "not exactly one of negative_for_pe/indeterminate exceeds 0.5 on a PE-negative study",
                values_str(preds, kPeStatus.data(), kPeStatus.size()));
        if (count_predicted(preds, kPositiveStudyLabels) > 0)
            add("R5", "a positive PE attribute exceeds 0.5 on a PE-negative study",
                values_str(preds, kPositiveStudyLabels.data(), kPositiveStudyLabels.size()));
    }
    return report;
}

PredictionSet enforce(const PredictionSet& preds) {
    PredictionSet out = preds;
    auto& p = out.study_probs;
    const double hi = kThreshold + kDelta;
    const double lo = kThreshold - kDelta;

    auto cap = [&](int idx) {
        if (p[idx] > kThreshold) p[idx] = lo;
    };
    // keep the group max above threshold, push the rest below
    auto keep_only_max = [&](auto group) {
        const int keep = group_argmax(out, group);
        for (int i : group)
            if (i != keep) cap(i);
    };

    if (out.image_positive()) {
        cap(kNegativeForPe);
        cap(kIndeterminate);
        if (count_predicted(out, kLaterality) == 0)
            p[group_argmax(out, kLaterality)] = hi;
        const int rvlv_count = count_predicted(out, kRvlv);
        if (rvlv_count == 0)
            p[group_argmax(out, kRvlv)] = hi;
        else if (rvlv_count == 2)
            keep_only_max(kRvlv);
        if (count_predicted(out, kChronicity) == 2)
            keep_only_max(kChronicity);
    } else {
        for (int i : kPositiveStudyLabels) cap(i);
        const int status_count = count_predicted(out, kPeStatus);
        if (status_count == 0)
            p[group_argmax(out, kPeStatus)] = hi;
        else if (status_count == 2)
            keep_only_max(kPeStatus);
    }
    return out;
}

} // namespace ctpe::consistency
