#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ctpe/consistency.hpp"
#include "ctpe/data.hpp"
#include "ctpe/error.hpp"
#include "ctpe/io.hpp"

using namespace ctpe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ctpe_test_" + std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

data::HUVolume small_volume(int n = 3, int h = 4, int w = 5) {
    data::HUVolume v;
    v.study_id = "t";
    v.n = n;
    v.height = h;
    v.width = w;
    v.voxels.resize(static_cast<size_t>(n) * h * w);
    for (size_t i = 0; i < v.voxels.size(); ++i)
        v.voxels[i] = static_cast<int16_t>((static_cast<int>(i) % 512) - 100);
    for (int k = 0; k < n; ++k) v.z_positions.push_back(10.0 * k);
    v.pixel_spacing = {0.7, 0.7};
    return v;
}

} // namespace

TEST_CASE("save/load round-trip preserves every voxel and metadata field") {
    TempDir tmp;
    const auto v = small_volume();
    data::StudyLabels labels;
    labels.image_pe = {0, 1, 0};
    labels.study[labels::kLeftsided] = 1;
    labels.study[labels::kRvlvLt1] = 1;

    const fs::path dir = tmp.path / "study01";
    data::save_study(dir, v, &labels, data::Split::Train);
    const auto loaded = data::load_study(dir);

    CHECK(loaded.volume.n == v.n);
    CHECK(loaded.volume.height == v.height);
    CHECK(loaded.volume.width == v.width);
    CHECK(loaded.volume.voxels == v.voxels);
    CHECK(loaded.volume.z_positions == v.z_positions);
    CHECK(loaded.volume.pixel_spacing == v.pixel_spacing);
    REQUIRE(loaded.labels.has_value());
    CHECK(loaded.labels->image_pe == labels.image_pe);
    CHECK(loaded.labels->study == labels.study);
    REQUIRE(loaded.split.has_value());
    CHECK(*loaded.split == data::Split::Train);
}

TEST_CASE("slices stored in shuffled z order load identically to sorted input") {
    TempDir tmp;
    auto v = small_volume(4);
    data::StudyLabels labels;
    labels.image_pe = {0, 1, 1, 0};
    labels.study[labels::kRightsided] = 1;
    labels.study[labels::kRvlvGte1] = 1;
    data::save_study(tmp.path / "sorted", v, &labels);

    // permute slices 0<->2 and fix up the manifest by hand
    auto shuffled = v;
    std::swap(shuffled.z_positions[0], shuffled.z_positions[2]);
    for (int i = 0; i < v.width * v.height; ++i)
        std::swap(shuffled.slice(0)[i], shuffled.slice(2)[i]);
    data::StudyLabels shuffled_labels = labels;
    std::swap(shuffled_labels.image_pe[0], shuffled_labels.image_pe[2]);
    data::save_study(tmp.path / "shuffled", shuffled, &shuffled_labels);

    const auto a = data::load_study(tmp.path / "sorted");
    const auto b = data::load_study(tmp.path / "shuffled");
    CHECK(a.volume.voxels == b.volume.voxels);
    CHECK(a.volume.z_positions == b.volume.z_positions);
    CHECK(a.labels->image_pe == b.labels->image_pe);
}

TEST_CASE("malformed studies are rejected with data errors") {
    TempDir tmp;
    const auto v = small_volume();

    SUBCASE("missing manifest") {
        fs::create_directories(tmp.path / "empty");
        CHECK_THROWS_AS(data::load_study(tmp.path / "empty"), Error);
    }
    SUBCASE("HU out of range names the slice") {
        auto bad = v;
        bad.slice(1)[0] = 5000;   // int16 holds it, the CT range does not
        data::save_study(tmp.path / "bad_hu", bad);
        try {
            data::load_study(tmp.path / "bad_hu");
            FAIL("expected data error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Data);
            CHECK(std::string(e.what()).find("slice 1") != std::string::npos);
        }
    }
    SUBCASE("duplicate z positions") {
        auto dup = v;
        dup.z_positions[1] = dup.z_positions[0];
        data::save_study(tmp.path / "dup_z", dup);
        CHECK_THROWS_AS(data::load_study(tmp.path / "dup_z"), Error);
    }
    SUBCASE("truncated payload") {
        data::save_study(tmp.path / "trunc", v);
        io::write_binary(tmp.path / "trunc" / "volume.i16", "xx", 2);
        CHECK_THROWS_AS(data::load_study(tmp.path / "trunc"), Error);
    }
    SUBCASE("partial label block") {
        data::save_study(tmp.path / "partial", v);
        std::ofstream f(tmp.path / "partial" / "manifest.txt", std::ios::app);
        f << "chronic=1\n";
        f.close();
        CHECK_THROWS_AS(data::load_study(tmp.path / "partial"), Error);
    }
}

TEST_CASE("synthetic generator: negatives, determinism, consistency") {
    data::SyntheticSpec spec;
    spec.n = 12;
    spec.pe_present = false;

    const auto a = data::generate_synthetic_study(7, spec);
    CHECK(a.labels.study[labels::kNegativeForPe] == 1);
    for (auto v : a.labels.image_pe) CHECK(v == 0);
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        if (j != labels::kNegativeForPe) CHECK(a.labels.study[j] == 0);

    const auto b = data::generate_synthetic_study(7, spec);
    CHECK(a.volume.voxels == b.volume.voxels);   // bit-identical
    CHECK(a.volume.z_positions == b.volume.z_positions);

    const auto c = data::generate_synthetic_study(8, spec);
    CHECK(a.volume.voxels != c.volume.voxels);
}

TEST_CASE("synthetic generator: positive left-sided study") {
    data::SyntheticSpec spec;
    spec.n = 20;
    spec.pe_present = true;
    spec.laterality = data::Laterality::Left;
    spec.clot_slices = 4;
    spec.rvlv_gte_1 = true;

    const auto s = data::generate_synthetic_study(7, spec);
    int positives = 0;
    for (auto v : s.labels.image_pe) positives += v;
    CHECK(positives == 4);
    CHECK(s.labels.study[labels::kLeftsided] == 1);
    CHECK(s.labels.study[labels::kRvlvGte1] + s.labels.study[labels::kRvlvLt1] == 1);
    CHECK(s.clot_boxes.size() == 4);

    // generated labels always validate clean
    consistency::PredictionSet p;
    p.image_probs.assign(s.labels.image_pe.begin(), s.labels.image_pe.end());
    for (int j = 0; j < labels::kNumStudyLabels; ++j) p.study_probs[j] = s.labels.study[j];
    CHECK(consistency::validate(p).is_consistent());

    // clot HU lands in the PE-window band inside bright vessels
    const auto& box = s.clot_boxes.front();
    const int16_t* slice = s.volume.slice(box.slice);
    const int cx = (box.x0 + box.x1) / 2, cy = (box.y0 + box.y1) / 2;
    const int16_t hu = slice[cy * s.volume.width + cx];
    CHECK(hu >= 50);
    CHECK(hu <= 200);
}

TEST_CASE("synthetic generator: PE with zero clot slices is a spec error") {
    data::SyntheticSpec spec;
    spec.pe_present = true;
    spec.clot_slices = 0;
    CHECK_THROWS_AS(data::generate_synthetic_study(1, spec), Error);
}

TEST_CASE("split_dataset: sizes, determinism, disjointness") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("s" + std::to_string(i));

    const auto split = data::split_dataset(ids, {0.8, 0.2, 0.0}, 99);
    CHECK(split.train.size() == 8);
    CHECK(split.val.size() == 2);
    CHECK(split.test.size() == 0);

    const auto again = data::split_dataset(ids, {0.8, 0.2, 0.0}, 99);
    CHECK(split.train == again.train);
    CHECK(split.val == again.val);

    std::set<std::string> all;
    for (const auto& id : split.train) all.insert(id);
    for (const auto& id : split.val) all.insert(id);
    CHECK(all.size() == 10);

    CHECK_THROWS_AS(data::split_dataset(ids, {0.5, 0.2, 0.2}, 1), Error);   // sums to 0.9
    CHECK_THROWS_AS(data::split_dataset({"a", "b"}, {0.4, 0.3, 0.3}, 1), Error);
}

TEST_CASE("split_dataset reproduces the 5824/1455 partition at cohort scale") {
    std::vector<std::string> ids;
    for (int i = 0; i < 7279; ++i) ids.push_back("c" + std::to_string(i));
    const auto split = data::split_dataset(ids, {0.8, 0.2, 0.0}, 5);
    CHECK(split.train.size() == 5824);
    CHECK(split.val.size() == 1455);
}

TEST_CASE("f32 cache round-trip and size validation") {
    TempDir tmp;
    const std::vector<float> values = {1.5f, -2.25f, 0.0f, 3.75f};
    data::write_f32_cache(tmp.path / "x.f32", values, "n=4\n");
    CHECK(data::read_f32_cache(tmp.path / "x.f32", 4) == values);
    CHECK_THROWS_AS(data::read_f32_cache(tmp.path / "x.f32", 5), Error);
    CHECK(data::cache_meta_path_text(tmp.path / "x.f32") == "n=4\n");
}

TEST_CASE("box sidecar round-trip") {
    TempDir tmp;
    const std::vector<data::Box> boxes = {{2, 10, 12, 15, 18}, {3, 11, 13, 16, 19}};
    data::write_boxes(tmp.path / "b.txt", boxes);
    const auto loaded = data::read_boxes(tmp.path / "b.txt");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].slice == 2);
    CHECK(loaded[1].y1 == 19);
    CHECK(loaded[0].contains(12, 15));
    CHECK(!loaded[0].contains(9, 15));
}
