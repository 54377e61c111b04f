#pragma once

#include <array>
#include <string>
#include <string_view>

namespace ctpe::labels {

// Canonical study-label ordering. Predictions files, checkpoints and the
// loss weights all use this order; never permute it.
inline constexpr int kNumStudyLabels = 9;

enum StudyLabel : int {
    kNegativeForPe = 0,
    kIndeterminate = 1,
    kLeftsided     = 2,
    kRightsided    = 3,
    kCentral       = 4,
    kRvlvGte1      = 5,
    kRvlvLt1       = 6,
    kChronic       = 7,
    kAcuteAndChronic = 8,
};

inline constexpr std::array<std::string_view, kNumStudyLabels> kStudyLabelNames = {
    "negative_for_pe",
    "indeterminate",
    "leftsided",
    "rightsided",
    "central",
    "rvlv_gte_1",
    "rvlv_lt_1",
    "chronic",
    "acute_and_chronic",
};

inline int study_label_index(std::string_view name) {
    for (int i = 0; i < kNumStudyLabels; ++i)
        if (kStudyLabelNames[i] == name) return i;
    return -1;
}

inline std::string study_label_name(int idx) {
    return std::string(kStudyLabelNames[static_cast<size_t>(idx)]);
}

} // namespace ctpe::labels
