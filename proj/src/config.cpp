#include "ctpe/config.hpp"

#include <sstream>

#include "ctpe/error.hpp"
#include "ctpe/io.hpp"

namespace ctpe::config {

namespace {

std::string weight_key(int j) { return "study_weight." + labels::study_label_name(j); }

} // namespace

const std::map<std::string, std::string>& RunConfig::known_keys() {
    static const std::map<std::string, std::string> keys = [] {
        std::map<std::string, std::string> k = {
            {"dataset_root", "path to the study directories"},
            {"out_dir", "directory for checkpoints, logs, predictions, reports"},
            {"seed", "master seed; recorded in every artifact"},
            {"deterministic", "1 = single-threaded kernels and fixed seeds"},
            {"input.height", "slice height expected by stage 1"},
            {"input.width", "slice width expected by stage 1"},
            {"input_standardize", "1 = per-slice zero-mean/unit-variance after windowing"},
            {"window.lung.level", "lung window level (HU)"},
            {"window.lung.width", "lung window width (HU)"},
            {"window.pe.level", "PE window level (HU)"},
            {"window.pe.width", "PE window width (HU)"},
            {"window.mediastinal.level", "mediastinal window level (HU)"},
            {"window.mediastinal.width", "mediastinal window width (HU)"},
            {"backbone", "stage-1 feature extractor (conv2..conv6; p suffix adds coordinate planes)"},
            {"embed_dim", "stage-1 embedding dimension d"},
            {"stage1.epochs", "stage-1 training epochs"},
            {"stage1.lr", "stage-1 Adam learning rate"},
            {"stage1.max_slices_per_batch", "chunk size; gradients accumulate to whole-study batches"},
            {"lstm_hidden", "stage-2 LSTM hidden size per direction"},
            {"seq_dim", "stage-2 sequence feature dimension m"},
            {"attn_dim", "stage-2 attention hidden dimension r"},
            {"stage2.epochs", "stage-2 training epochs"},
            {"stage2.lr", "stage-2 Adam learning rate"},
            {"stage2.pooling", "attention | mean"},
            {"adam.beta1", "Adam beta1"},
            {"adam.beta2", "Adam beta2"},
            {"adam.eps", "Adam epsilon"},
            {"adam.clip", "global gradient-norm clip (0 disables)"},
            {"image_weight", "image-level loss weight w"},
            {"split.train", "fraction of studies for training"},
            {"split.val", "fraction of studies for validation"},
            {"split.test", "fraction of studies for testing"},
            {"embed.method", "bag-feature 2-D embedding: tsne | pca"},
            {"preprocess.export_u8", "1 = also write 8-bit windowed planes for inspection"},
            {"evaluate.cam_count", "CAM overlays exported per evaluate run"},
            {"synth.num_studies", "make-synthetic: number of studies"},
            {"synth.pos_fraction", "make-synthetic: fraction with PE"},
            {"synth.n_min", "make-synthetic: min slices per study"},
            {"synth.n_max", "make-synthetic: max slices per study"},
            {"synth.height", "make-synthetic: slice height"},
            {"synth.width", "make-synthetic: slice width"},
            {"synth.clot_min", "make-synthetic: min clot run length"},
            {"synth.clot_max", "make-synthetic: max clot run length"},
            {"synth.distractor_prob", "make-synthetic: negative studies with isolated lookalikes"},
            {"synth.distractor_min", "make-synthetic: min lookalike slices per study"},
            {"synth.distractor_max", "make-synthetic: max lookalike slices per study"},
        };
        for (int j = 0; j < labels::kNumStudyLabels; ++j)
            k[weight_key(j)] = "study-level loss weight";
        return k;
    }();
    return keys;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw usage_error("config file not found: " + path.string());
    return from_text(io::read_text(path));
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    for (auto& [k, v] : io::parse_kv_lines(text)) {
        if (!known_keys().count(k)) throw usage_error("unknown config key '" + k + "'");
        cfg.kv_[k] = v;
    }
    return cfg;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::string RunConfig::require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw usage_error("config key '" + key + "' is required");
    return it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw usage_error("config key '" + key + "': bad number '" + it->second + "'");
    }
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (const std::exception&) {
        throw usage_error("config key '" + key + "': bad integer '" + it->second + "'");
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "1" || it->second == "true") return true;
    if (it->second == "0" || it->second == "false") return false;
    throw usage_error("config key '" + key + "': bad boolean '" + it->second + "'");
}

uint64_t RunConfig::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw usage_error("config key '" + key + "': bad integer '" + it->second + "'");
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw usage_error("unknown config key '" + key + "'");
    kv_[key] = value;
}

std::string RunConfig::canonical_text() const {
    std::ostringstream ss;
    for (const auto& [k, v] : kv_) ss << k << "=" << v << "\n";
    return ss.str();
}

uint64_t RunConfig::hash() const { return io::fnv1a64(canonical_text()); }

std::array<windowing::WindowSpec, 3> RunConfig::windows() const {
    return {windowing::WindowSpec{get_double("window.lung.level", -600.0),
                                  get_double("window.lung.width", 1500.0)},
            windowing::WindowSpec{get_double("window.pe.level", 100.0),
                                  get_double("window.pe.width", 700.0)},
            windowing::WindowSpec{get_double("window.mediastinal.level", 40.0),
                                  get_double("window.mediastinal.width", 400.0)}};
}

loss::LabelWeights RunConfig::label_weights() const {
    loss::LabelWeights w;
    for (int j = 0; j < labels::kNumStudyLabels; ++j)
        w.study[j] = get_double(weight_key(j), 1.0);
    w.image = get_double("image_weight", 1.0);
    w.validate();
    return w;
}

data::SplitFractions RunConfig::split_fractions() const {
    return {get_double("split.train", 0.8), get_double("split.val", 0.2),
            get_double("split.test", 0.0)};
}

stage1::Stage1Settings RunConfig::stage1_settings() const {
    stage1::Stage1Settings s;
    s.backbone = get("backbone", "conv4");
    s.d = get_int("embed_dim", 512);
    s.input_h = get_int("input.height", 64);
    s.input_w = get_int("input.width", 64);
    s.input_standardize = get_bool("input_standardize", false);
    s.epochs = get_int("stage1.epochs", 8);
    s.max_slices_per_batch = get_int("stage1.max_slices_per_batch", 64);
    s.lr = get_double("stage1.lr", 1e-3);
    s.beta1 = get_double("adam.beta1", 0.9);
    s.beta2 = get_double("adam.beta2", 0.999);
    s.eps = get_double("adam.eps", 1e-8);
    s.clip = get_double("adam.clip", 10.0);
    s.seed = seed();
    s.weights = label_weights();
    return s;
}

stage2::Stage2Settings RunConfig::stage2_settings() const {
    stage2::Stage2Settings s;
    s.d = get_int("embed_dim", 512);
    s.hidden = get_int("lstm_hidden", 128);
    s.m = get_int("seq_dim", 256);
    s.r = get_int("attn_dim", 128);
    const std::string pooling = get("stage2.pooling", "attention");
    if (pooling == "attention") s.pooling = stage2::Pooling::Attention;
    else if (pooling == "mean") s.pooling = stage2::Pooling::Mean;
    else throw usage_error("stage2.pooling must be attention or mean");
    s.epochs = get_int("stage2.epochs", 100);
    s.lr = get_double("stage2.lr", 1e-3);
    s.beta1 = get_double("adam.beta1", 0.9);
    s.beta2 = get_double("adam.beta2", 0.999);
    s.eps = get_double("adam.eps", 1e-8);
    s.clip = get_double("adam.clip", 10.0);
    s.seed = seed();
    s.weights = label_weights();
    return s;
}

std::string default_config_text() {
    return R"(# ctpe run configuration
dataset_root=data
out_dir=runs/default
seed=1234
deterministic=1

# pre-processing
window.lung.level=-600
window.lung.width=1500
window.pe.level=100
window.pe.width=700
window.mediastinal.level=40
window.mediastinal.width=400
input.height=64
input.width=64
input_standardize=0

# stage 1
backbone=conv4
embed_dim=512
stage1.epochs=8
stage1.lr=0.001
stage1.max_slices_per_batch=64

# stage 2
lstm_hidden=128
seq_dim=256
attn_dim=128
stage2.epochs=100
stage2.lr=0.001
stage2.pooling=attention

# optimizer
adam.beta1=0.9
adam.beta2=0.999
adam.eps=1e-8
adam.clip=10

# loss weights (RSNA-STR PE challenge scoring weights)
image_weight=0.07361963
study_weight.negative_for_pe=0.0736196319
study_weight.indeterminate=0.09202453988
study_weight.leftsided=0.06257668712
study_weight.rightsided=0.06257668712
study_weight.central=0.1877300613
study_weight.rvlv_gte_1=0.2346625767
study_weight.rvlv_lt_1=0.0782208589
study_weight.chronic=0.1042944785
study_weight.acute_and_chronic=0.1042944785

# data split
split.train=0.8
split.val=0.2
split.test=0.0

# evaluation
embed.method=tsne
evaluate.cam_count=4

# synthetic data
synth.num_studies=200
synth.pos_fraction=0.5
synth.n_min=16
synth.n_max=32
synth.height=64
synth.width=64
synth.clot_min=3
synth.clot_max=6
synth.distractor_prob=0.7
synth.distractor_max=2
)";
}

} // namespace ctpe::config
