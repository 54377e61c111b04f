#pragma once

#include <array>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ctpe/config.hpp"
#include "ctpe/data.hpp"
#include "ctpe/evaluate.hpp"
#include "ctpe/stage1.hpp"
#include "ctpe/stage2.hpp"

namespace ctpe::runner {

// Honors the deterministic flag (single-threaded kernels). Kernel results
// are thread-count invariant either way; this pins scheduling too.
void apply_determinism(const config::RunConfig& cfg);

// ---------------------------------------------------------------------------
// Artifact layout under out_dir / dataset_root

std::filesystem::path stage1_ckpt_path(const config::RunConfig& cfg);
std::filesystem::path stage2_ckpt_path(const config::RunConfig& cfg);
std::filesystem::path predictions_path(const config::RunConfig& cfg, data::Split split);
std::filesystem::path windowed_cache_path(const std::filesystem::path& study_dir);
std::filesystem::path embeddings_cache_path(const std::filesystem::path& study_dir);

// ---------------------------------------------------------------------------
// Commands

void make_synthetic(const config::RunConfig& cfg);

struct CacheStats {
    int written = 0;
    int skipped = 0;
};

CacheStats preprocess(const config::RunConfig& cfg);

stage1::Stage1TrainResult train_stage1_cmd(const config::RunConfig& cfg);

CacheStats extract_features(const config::RunConfig& cfg);

stage2::Stage2TrainResult train_stage2_cmd(const config::RunConfig& cfg);

std::filesystem::path predict(const config::RunConfig& cfg, data::Split split);

evaluate::MetricsReport evaluate_cmd(const config::RunConfig& cfg, data::Split split);

// Emits one "study_id,rule,description" line per violation; returns the count.
int check_consistency(const std::filesystem::path& predictions_file, bool use_raw,
                      std::ostream& report);

// ---------------------------------------------------------------------------
// Shared plumbing (also used by the test suites)

struct SplitView {
    std::vector<data::StudyManifest> train, val, test;

    const std::vector<data::StudyManifest>& of(data::Split s) const {
        switch (s) {
            case data::Split::Train: return train;
            case data::Split::Val: return val;
            default: return test;
        }
    }
};

// Uses manifest split tags when every study carries one; otherwise derives
// the partition from config fractions + seed.
SplitView resolve_splits(const config::RunConfig& cfg,
                         const std::vector<data::StudyManifest>& manifests);

std::vector<stage1::TrainStudy> load_train_studies(const config::RunConfig& cfg,
                                                   const std::vector<data::StudyManifest>& studies);

std::vector<stage2::FeatureStudy> load_feature_studies(
    const config::RunConfig& cfg, const std::vector<data::StudyManifest>& studies);

struct PredictionRecord {
    std::string study_id;
    std::array<double, labels::kNumStudyLabels> enforced{};
    std::array<double, labels::kNumStudyLabels> raw{};
    std::vector<double> image_probs;
    std::vector<double> attention;
};

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

} // namespace ctpe::runner
