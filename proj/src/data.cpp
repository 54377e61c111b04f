#include "ctpe/data.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "ctpe/consistency.hpp"
#include "ctpe/error.hpp"
#include "ctpe/io.hpp"
#include "ctpe/rng.hpp"

namespace fs = std::filesystem;

namespace ctpe::data {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

std::optional<Split> parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    return std::nullopt;
}

namespace {

void check_hu_range(const HUVolume& v) {
    for (int k = 0; k < v.n; ++k) {
        const int16_t* s = v.slice(k);
        for (size_t i = 0; i < v.slice_size(); ++i) {
            if (s[i] < kHuMin || s[i] > kHuMax)
                throw data_error("study '" + v.study_id + "': HU value " + std::to_string(s[i]) +
                                 " out of range [-1024,3071] in slice " + std::to_string(k));
        }
    }
}

void validate_labels(const std::string& study_id, const StudyLabels& labels) {
    consistency::PredictionSet p;
    p.image_probs.assign(labels.image_pe.begin(), labels.image_pe.end());
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        p.study_probs[j] = labels.study[j];
    const auto report = consistency::validate(p);
    if (!report.is_consistent()) {
        std::string msg = "study '" + study_id + "': label block violates consistency rules:";
        for (const auto& v : report.violations) msg += " [" + v.rule_id + "] " + v.description + ";";
        throw data_error(msg);
    }
}

} // namespace

Study load_study(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.txt";
    if (!fs::exists(manifest_path))
        throw data_error("missing manifest: " + manifest_path.string());

    std::map<std::string, std::string> kv;
    for (auto& [k, v] : io::parse_kv_lines(io::read_text(manifest_path))) kv[k] = v;

    auto require = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw data_error(manifest_path.string() + ": missing key '" + std::string(key) + "'");
        return it->second;
    };

    Study study;
    HUVolume& v = study.volume;
    v.study_id = dir.filename().string();
    v.n = std::stoi(require("n"));
    v.height = std::stoi(require("height"));
    v.width = std::stoi(require("width"));
    if (v.n < 1 || v.height < 1 || v.width < 1)
        throw data_error(manifest_path.string() + ": non-positive dimensions");
    v.pixel_spacing = {std::stod(require("pixel_spacing_x")), std::stod(require("pixel_spacing_y"))};
    v.z_positions = io::parse_csv_doubles(require("z_positions"));
    if (static_cast<int>(v.z_positions.size()) != v.n)
        throw data_error(manifest_path.string() + ": z_positions count " +
                         std::to_string(v.z_positions.size()) + " != n " + std::to_string(v.n));

    const fs::path volume_path = dir / "volume.i16";
    const auto raw = io::read_binary(volume_path);
    const size_t expected = static_cast<size_t>(v.n) * v.height * v.width * sizeof(int16_t);
    if (raw.size() != expected)
        throw data_error(volume_path.string() + ": payload is " + std::to_string(raw.size()) +
                         " bytes, expected " + std::to_string(expected));
    v.voxels.resize(raw.size() / sizeof(int16_t));
    std::memcpy(v.voxels.data(), raw.data(), raw.size());

    // optional label block: all nine study labels plus image_pe, or none
    int label_keys = 0;
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        if (kv.count(labels::study_label_name(j))) ++label_keys;
    const bool has_image_pe = kv.count("image_pe") > 0;
    if (label_keys > 0 || has_image_pe) {
        if (label_keys != labels::kNumStudyLabels || !has_image_pe)
            throw data_error(manifest_path.string() + ": incomplete label block (need all nine study labels and image_pe)");
        StudyLabels labels;
        for (int j = 0; j < labels::kNumStudyLabels; ++j) {
            const int val = std::stoi(kv.at(labels::study_label_name(j)));
            if (val != 0 && val != 1)
                throw data_error(manifest_path.string() + ": label '" + labels::study_label_name(j) + "' must be 0/1");
            labels.study[j] = static_cast<uint8_t>(val);
        }
        for (int b : io::parse_csv_ints(kv.at("image_pe"))) {
            if (b != 0 && b != 1) throw data_error(manifest_path.string() + ": image_pe entries must be 0/1");
            labels.image_pe.push_back(static_cast<uint8_t>(b));
        }
        if (static_cast<int>(labels.image_pe.size()) != v.n)
            throw data_error(manifest_path.string() + ": image_pe count != n");
        study.labels = std::move(labels);
    }

    if (auto it = kv.find("split"); it != kv.end()) {
        study.split = parse_split(it->second);
        if (!study.split) throw data_error(manifest_path.string() + ": bad split tag '" + it->second + "'");
    }

    // sort slices by z ascending, carrying image_pe along
    std::vector<int> order(v.n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return v.z_positions[a] < v.z_positions[b]; });

    HUVolume sorted = v;
    for (int k = 0; k < v.n; ++k) {
        sorted.z_positions[k] = v.z_positions[order[k]];
        std::memcpy(sorted.slice(k), v.slice(order[k]), v.slice_size() * sizeof(int16_t));
    }
    if (study.labels) {
        auto pe = study.labels->image_pe;
        for (int k = 0; k < v.n; ++k) study.labels->image_pe[k] = pe[order[k]];
    }
    v = std::move(sorted);

    for (int k = 1; k < v.n; ++k)
        if (!(v.z_positions[k] > v.z_positions[k - 1]))
            throw data_error("study '" + v.study_id + "': duplicate z_position " +
                             std::to_string(v.z_positions[k]));

    check_hu_range(v);
    if (study.labels) validate_labels(v.study_id, *study.labels);
    return study;
}

void save_study(const fs::path& dir, const HUVolume& volume, const StudyLabels* labels,
                std::optional<Split> split) {
    fs::create_directories(dir);
    std::ostringstream m;
    m.precision(17);
    m << "n=" << volume.n << "\n";
    m << "height=" << volume.height << "\n";
    m << "width=" << volume.width << "\n";
    m << "pixel_spacing_x=" << volume.pixel_spacing.first << "\n";
    m << "pixel_spacing_y=" << volume.pixel_spacing.second << "\n";
    m << "z_positions=" << io::join_csv(volume.z_positions) << "\n";
    if (split) m << "split=" << split_name(*split) << "\n";
    if (labels) {
        for (int j = 0; j < labels::kNumStudyLabels; ++j)
            m << labels::study_label_name(j) << "=" << static_cast<int>(labels->study[j]) << "\n";
        std::vector<int> pe(labels->image_pe.begin(), labels->image_pe.end());
        m << "image_pe=" << io::join_csv(pe) << "\n";
    }
    io::write_text(dir / "manifest.txt", m.str());
    io::write_binary(dir / "volume.i16", volume.voxels.data(),
                     volume.voxels.size() * sizeof(int16_t));
}

std::vector<StudyManifest> scan_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw usage_error("dataset root not found: " + root.string());
    std::vector<StudyManifest> out;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        const fs::path manifest = entry.path() / "manifest.txt";
        if (!fs::exists(manifest)) continue;
        StudyManifest sm;
        sm.study_id = entry.path().filename().string();
        sm.dir = entry.path();
        std::map<std::string, std::string> kv;
        for (auto& [k, v] : io::parse_kv_lines(io::read_text(manifest))) kv[k] = v;
        sm.has_labels = kv.count("image_pe") > 0;
        if (auto it = kv.find("split"); it != kv.end()) sm.split = parse_split(it->second);
        out.push_back(std::move(sm));
    }
    std::sort(out.begin(), out.end(),
              [](const StudyManifest& a, const StudyManifest& b) { return a.study_id < b.study_id; });
    for (size_t i = 1; i < out.size(); ++i)
        if (out[i].study_id == out[i - 1].study_id)
            throw data_error("duplicate study id: " + out[i].study_id);
    return out;
}

SplitAssignment split_dataset(std::vector<std::string> study_ids,
                              const SplitFractions& fractions, uint64_t seed) {
    const double sum = fractions.train + fractions.val + fractions.test;
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 || std::abs(sum - 1.0) > 1e-9)
        throw usage_error("split fractions must be nonnegative and sum to 1");
    int partitions = 0;
    for (double f : {fractions.train, fractions.val, fractions.test})
        if (f > 0) ++partitions;
    if (study_ids.size() < static_cast<size_t>(partitions))
        throw usage_error("fewer studies (" + std::to_string(study_ids.size()) +
                          ") than partitions (" + std::to_string(partitions) + ")");

    std::sort(study_ids.begin(), study_ids.end());
    Rng rng(seed);
    rng.shuffle(study_ids);

    const size_t total = study_ids.size();
    const size_t n_val = static_cast<size_t>(std::floor(total * fractions.val));
    const size_t n_test = static_cast<size_t>(std::floor(total * fractions.test));
    const size_t n_train = total - n_val - n_test;

    SplitAssignment out;
    out.train.assign(study_ids.begin(), study_ids.begin() + n_train);
    out.val.assign(study_ids.begin() + n_train, study_ids.begin() + n_train + n_val);
    out.test.assign(study_ids.begin() + n_train + n_val, study_ids.end());
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Ellipse {
    double cx, cy, rx, ry;
    bool contains(int x, int y) const {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
};

int16_t clamp_hu(double v) {
    return static_cast<int16_t>(std::clamp(v, static_cast<double>(kHuMin), static_cast<double>(kHuMax)));
}

void fill_ellipse(int16_t* slice, int H, int W, const Ellipse& e, Rng& rng,
                  double mean, double sd, double lo, double hi) {
    const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (e.contains(x, y))
                slice[y * W + x] = clamp_hu(std::clamp(rng.normal(mean, sd), lo, hi));
}

Box ellipse_box(int slice_idx, const Ellipse& e, int H, int W) {
    Box b;
    b.slice = slice_idx;
    b.x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
    b.x1 = std::min(W - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
    b.y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
    b.y1 = std::min(H - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
    return b;
}

} // namespace

SyntheticStudy generate_synthetic_study(uint64_t seed, const SyntheticSpec& spec) {
    if (spec.n < 1) throw usage_error("synthetic spec: n must be >= 1");
    if (spec.height < 16 || spec.width < 16)
        throw usage_error("synthetic spec: height/width must be >= 16");
    if (spec.pe_present && spec.clot_slices < 1)
        throw usage_error("synthetic spec: PE present but clot_slices == 0");
    if (spec.clot_slices > spec.n)
        throw usage_error("synthetic spec: clot_slices exceeds n");

    Rng rng(seed);
    SyntheticStudy out;
    HUVolume& v = out.volume;
    v.study_id = spec.study_id;
    v.n = spec.n;
    v.height = spec.height;
    v.width = spec.width;
    v.pixel_spacing = spec.pixel_spacing;
    v.voxels.resize(static_cast<size_t>(spec.n) * spec.height * spec.width);
    for (int k = 0; k < spec.n; ++k) v.z_positions.push_back(k * spec.z_step);

    const double W = spec.width, H = spec.height;
    const Ellipse body{W * 0.50, H * 0.53, W * 0.42, H * 0.38};
    const Ellipse lung_left{W * 0.31, H * 0.50, W * 0.14, H * 0.21};
    const Ellipse lung_right{W * 0.69, H * 0.50, W * 0.14, H * 0.21};
    const double vessel_r = 0.07 * W;

    // per-study drift phases so vessel tracks differ between studies
    const double phase_l = rng.uniform(0.0, 2.0 * M_PI);
    const double phase_r = rng.uniform(0.0, 2.0 * M_PI);

    auto vessel_center = [&](Laterality side, int k) -> std::pair<double, double> {
        const double t = spec.n > 1 ? static_cast<double>(k) / (spec.n - 1) : 0.0;
        switch (side) {
            case Laterality::Left:
                return {lung_left.cx + 0.35 * lung_left.rx * std::sin(2.0 * M_PI * t + phase_l),
                        lung_left.cy + 0.35 * lung_left.ry * std::cos(2.0 * M_PI * t + phase_l)};
            case Laterality::Right:
                return {lung_right.cx + 0.35 * lung_right.rx * std::sin(2.0 * M_PI * t + phase_r),
                        lung_right.cy + 0.35 * lung_right.ry * std::cos(2.0 * M_PI * t + phase_r)};
            case Laterality::Central:
            default:
                return {W * 0.50, H * 0.40};
        }
    };

    // clot run and isolated distractor slices
    int clot_start = -1;
    if (spec.pe_present)
        clot_start = static_cast<int>(rng.uniform_int(0, spec.n - spec.clot_slices));
    auto in_clot_run = [&](int k) {
        return spec.pe_present && k >= clot_start && k < clot_start + spec.clot_slices;
    };

    std::vector<int> distractor_at;
    if (spec.distractor_slices > 0) {
        std::vector<int> candidates;
        for (int k = 0; k < spec.n; ++k) {
            if (in_clot_run(k - 1) || in_clot_run(k) || in_clot_run(k + 1)) continue;
            candidates.push_back(k);
        }
        rng.shuffle(candidates);
        for (int k : candidates) {
            if (static_cast<int>(distractor_at.size()) >= spec.distractor_slices) break;
            bool adjacent = false;
            for (int d : distractor_at)
                if (std::abs(d - k) <= 1) adjacent = true;
            if (!adjacent) distractor_at.push_back(k);
        }
        std::sort(distractor_at.begin(), distractor_at.end());
    }

    for (int k = 0; k < spec.n; ++k) {
        int16_t* s = v.slice(k);
        for (size_t i = 0; i < v.slice_size(); ++i)
            s[i] = clamp_hu(rng.normal(-1000.0, 15.0));
        fill_ellipse(s, spec.height, spec.width, body, rng, 40.0, 12.0, -100.0, 200.0);
        fill_ellipse(s, spec.height, spec.width, lung_left, rng, -850.0, 30.0, -1000.0, -650.0);
        fill_ellipse(s, spec.height, spec.width, lung_right, rng, -850.0, 30.0, -1000.0, -650.0);

        for (Laterality side : {Laterality::Left, Laterality::Right, Laterality::Central}) {
            const auto [cx, cy] = vessel_center(side, k);
            const double r = side == Laterality::Central ? vessel_r * 1.15 : vessel_r;
            fill_ellipse(s, spec.height, spec.width, {cx, cy, r, r}, rng, 400.0, 35.0, 300.0, 500.0);
        }

        auto plant_blob = [&](Laterality side, std::vector<Box>& boxes) {
            const auto [cx, cy] = vessel_center(side, k);
            // the filling defect occludes the lumen, leaving a thin
            // contrast rim, so the bright disk visibly drops out
            const double r = std::max(1.6, vessel_r * 0.85);
            const Ellipse clot{cx, cy, r, r};
            const double lo = spec.clot_hu_lo, hi = spec.clot_hu_hi;
            const double mid = 0.5 * (lo + hi);
            fill_ellipse(s, spec.height, spec.width, clot, rng, mid, (hi - lo) / 4.0, lo, hi);
            boxes.push_back(ellipse_box(k, clot, spec.height, spec.width));
        };

        if (in_clot_run(k)) plant_blob(spec.laterality, out.clot_boxes);
        if (std::find(distractor_at.begin(), distractor_at.end(), k) != distractor_at.end()) {
            const auto side = static_cast<Laterality>(rng.uniform_int(0, 2));
            plant_blob(side, out.distractor_boxes);
        }
    }

    StudyLabels& labels = out.labels;
    labels.image_pe.assign(spec.n, 0);
    if (spec.pe_present) {
        for (int k = clot_start; k < clot_start + spec.clot_slices; ++k) labels.image_pe[k] = 1;
        switch (spec.laterality) {
            case Laterality::Left: labels.study[labels::kLeftsided] = 1; break;
            case Laterality::Right: labels.study[labels::kRightsided] = 1; break;
            case Laterality::Central: labels.study[labels::kCentral] = 1; break;
        }
        labels.study[spec.rvlv_gte_1 ? labels::kRvlvGte1 : labels::kRvlvLt1] = 1;
        if (spec.chronicity == Chronicity::Chronic) labels.study[labels::kChronic] = 1;
        if (spec.chronicity == Chronicity::AcuteAndChronic) labels.study[labels::kAcuteAndChronic] = 1;
    } else {
        labels.study[labels::kNegativeForPe] = 1;
    }

    validate_labels(v.study_id, labels);
    return out;
}

void write_boxes(const fs::path& path, const std::vector<Box>& boxes) {
    std::ostringstream ss;
    for (const auto& b : boxes)
        ss << b.slice << " " << b.x0 << " " << b.y0 << " " << b.x1 << " " << b.y1 << "\n";
    io::write_text(path, ss.str());
}

std::vector<Box> read_boxes(const fs::path& path) {
    std::vector<Box> out;
    std::istringstream ss(io::read_text(path));
    Box b;
    while (ss >> b.slice >> b.x0 >> b.y0 >> b.x1 >> b.y1) out.push_back(b);
    return out;
}

// ---------------------------------------------------------------------------
// f32 caches

void write_f32_cache(const fs::path& path, const std::vector<float>& values,
                     const std::string& meta_text) {
    io::write_binary(path, values.data(), values.size() * sizeof(float));
    fs::path meta = path;
    meta.replace_extension(".meta");
    io::write_text(meta, meta_text);
}

std::vector<float> read_f32_cache(const fs::path& path, size_t expected_count) {
    const auto raw = io::read_binary(path);
    if (raw.size() != expected_count * sizeof(float))
        throw data_error(path.string() + ": cache is " + std::to_string(raw.size()) +
                         " bytes, expected " + std::to_string(expected_count * sizeof(float)));
    std::vector<float> out(expected_count);
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

std::string cache_meta_path_text(const fs::path& path) {
    fs::path meta = path;
    meta.replace_extension(".meta");
    if (!fs::exists(meta)) return "";
    return io::read_text(meta);
}

} // namespace ctpe::data
