#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctpe/labels.hpp"

namespace ctpe::data {

// Standard 12-bit CT storage range.
inline constexpr int kHuMin = -1024;
inline constexpr int kHuMax = 3071;

struct HUVolume {
    std::string study_id;
    int n = 0;
    int height = 0;
    int width = 0;
    std::vector<int16_t> voxels;       // [n][H][W], slice-major
    std::vector<double> z_positions;   // mm, strictly ascending
    std::pair<double, double> pixel_spacing{1.0, 1.0};

    size_t slice_size() const { return static_cast<size_t>(height) * width; }
    const int16_t* slice(int k) const { return voxels.data() + static_cast<size_t>(k) * slice_size(); }
    int16_t* slice(int k) { return voxels.data() + static_cast<size_t>(k) * slice_size(); }
};

struct StudyLabels {
    std::vector<uint8_t> image_pe;                           // size n, 0/1
    std::array<uint8_t, labels::kNumStudyLabels> study{};    // canonical order, 0/1

    bool any_image_positive() const {
        for (auto v : image_pe)
            if (v) return true;
        return false;
    }
};

enum class Split { Train, Val, Test };

const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

struct StudyManifest {
    std::string study_id;
    std::filesystem::path dir;
    bool has_labels = false;
    std::optional<Split> split;
};

struct Study {
    HUVolume volume;
    std::optional<StudyLabels> labels;
    std::optional<Split> split;
};

// Reads manifest.txt + volume.i16, sorts slices by z ascending and checks
// the HU range. Throws data errors on malformed input, naming the study.
Study load_study(const std::filesystem::path& dir);

void save_study(const std::filesystem::path& dir, const HUVolume& volume,
                const StudyLabels* labels = nullptr,
                std::optional<Split> split = std::nullopt);

// Enumerates root/<study_id>/manifest.txt directories, sorted by study id.
std::vector<StudyManifest> scan_dataset(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Splits

struct SplitFractions {
    double train = 0.8;
    double val = 0.2;
    double test = 0.0;
};

struct SplitAssignment {
    std::vector<std::string> train, val, test;
};

// Deterministic for a fixed (ids, fractions, seed). Val and test sizes are
// floor(S*f); train takes the remainder.
SplitAssignment split_dataset(std::vector<std::string> study_ids,
                              const SplitFractions& fractions, uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic studies

enum class Laterality { Left, Right, Central };
enum class Chronicity { AcuteOnly, Chronic, AcuteAndChronic };

struct SyntheticSpec {
    std::string study_id = "synthetic";
    int n = 24;
    int height = 64;
    int width = 64;
    bool pe_present = false;
    Laterality laterality = Laterality::Left;
    bool rvlv_gte_1 = false;
    Chronicity chronicity = Chronicity::AcuteOnly;
    int clot_slices = 0;          // length of the contiguous clot run
    double clot_hu_lo = 50.0;     // filling defect against ~300-500 HU vessels
    double clot_hu_hi = 200.0;
    int distractor_slices = 0;    // isolated single-slice clot-lookalikes, image_pe stays 0
    double z_step = 5.0;
    std::pair<double, double> pixel_spacing{0.7, 0.7};
};

// Inclusive pixel bounds of a planted structure on one slice.
struct Box {
    int slice = 0;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct SyntheticStudy {
    HUVolume volume;
    StudyLabels labels;
    std::vector<Box> clot_boxes;        // one per clot slice
    std::vector<Box> distractor_boxes;
};

// Pure function of (seed, spec). Generated labels always satisfy the
// consistency rules.
SyntheticStudy generate_synthetic_study(uint64_t seed, const SyntheticSpec& spec);

void write_boxes(const std::filesystem::path& path, const std::vector<Box>& boxes);
std::vector<Box> read_boxes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Per-study caches (little-endian float32 payloads with a key=value sidecar)

void write_f32_cache(const std::filesystem::path& path, const std::vector<float>& values,
                     const std::string& meta_text);
std::vector<float> read_f32_cache(const std::filesystem::path& path, size_t expected_count);
std::string cache_meta_path_text(const std::filesystem::path& path);  // "" if absent

} // namespace ctpe::data
