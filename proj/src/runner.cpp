#include "ctpe/runner.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ctpe/checkpoint.hpp"
#include "ctpe/consistency.hpp"
#include "ctpe/error.hpp"
#include "ctpe/io.hpp"
#include "ctpe/rng.hpp"
#include "ctpe/windowing.hpp"

namespace fs = std::filesystem;

namespace ctpe::runner {

void apply_determinism(const config::RunConfig& cfg) {
#ifdef _OPENMP
    if (cfg.deterministic()) omp_set_num_threads(1);
#else
    (void)cfg;
#endif
}

fs::path stage1_ckpt_path(const config::RunConfig& cfg) { return cfg.out_dir() / "stage1.ckpt"; }
fs::path stage2_ckpt_path(const config::RunConfig& cfg) { return cfg.out_dir() / "stage2.ckpt"; }
fs::path predictions_path(const config::RunConfig& cfg, data::Split split) {
    return cfg.out_dir() / (std::string("predictions_") + data::split_name(split) + ".txt");
}
fs::path windowed_cache_path(const fs::path& study_dir) { return study_dir / "windowed.f32"; }
fs::path embeddings_cache_path(const fs::path& study_dir) { return study_dir / "embeddings.f32"; }

namespace {

ckpt::Provenance provenance(const config::RunConfig& cfg) {
    return {cfg.canonical_text(), cfg.hash(), cfg.seed()};
}

void write_run_snapshot(const config::RunConfig& cfg) {
    fs::create_directories(cfg.out_dir());
    io::write_text(cfg.out_dir() / "config_used.cfg", cfg.canonical_text());
}

std::string window_signature(const config::RunConfig& cfg) {
    std::ostringstream ss;
    ss.precision(17);
    for (const auto& w : cfg.windows()) ss << w.level << ":" << w.width << ";";
    return ss.str();
}

std::string meta_value(const std::string& meta_text, const std::string& key) {
    if (meta_text.empty()) return "";
    for (auto& [k, v] : io::parse_kv_lines(meta_text))
        if (k == key) return v;
    return "";
}

void write_train_log(const fs::path& path, const config::RunConfig& cfg,
                     const std::vector<stage1::EpochLog>& log, int best_epoch) {
    std::ostringstream ss;
    ss << "# config_hash=" << io::hash_hex(cfg.hash()) << " seed=" << cfg.seed() << "\n";
    ss << "epoch,train_loss,val_loss\n";
    ss.precision(12);
    for (const auto& e : log) ss << e.epoch << "," << e.train_loss << "," << e.val_loss << "\n";
    ss << "best_epoch," << best_epoch << ",\n";
    io::write_text(path, ss.str());
}

void write_train_log(const fs::path& path, const config::RunConfig& cfg,
                     const std::vector<stage2::EpochLog>& log, int best_epoch) {
    std::vector<stage1::EpochLog> converted;
    for (const auto& e : log) converted.push_back({e.epoch, e.train_loss, e.val_loss});
    write_train_log(path, cfg, converted, best_epoch);
}

} // namespace

SplitView resolve_splits(const config::RunConfig& cfg,
                         const std::vector<data::StudyManifest>& manifests) {
    if (manifests.empty()) throw usage_error("dataset contains no studies");

    SplitView view;
    const bool all_tagged = std::all_of(manifests.begin(), manifests.end(),
                                        [](const auto& m) { return m.split.has_value(); });
    if (all_tagged) {
        for (const auto& m : manifests) {
            switch (*m.split) {
                case data::Split::Train: view.train.push_back(m); break;
                case data::Split::Val: view.val.push_back(m); break;
                case data::Split::Test: view.test.push_back(m); break;
            }
        }
        return view;
    }

    std::vector<std::string> ids;
    for (const auto& m : manifests) ids.push_back(m.study_id);
    const auto assignment = data::split_dataset(ids, cfg.split_fractions(), cfg.seed());
    std::map<std::string, const data::StudyManifest*> by_id;
    for (const auto& m : manifests) by_id[m.study_id] = &m;
    for (const auto& id : assignment.train) view.train.push_back(*by_id.at(id));
    for (const auto& id : assignment.val) view.val.push_back(*by_id.at(id));
    for (const auto& id : assignment.test) view.test.push_back(*by_id.at(id));
    return view;
}

// ---------------------------------------------------------------------------
// make-synthetic

void make_synthetic(const config::RunConfig& cfg) {
    const fs::path root = cfg.get("dataset_root", "data");
    fs::create_directories(root);

    const int num = cfg.get_int("synth.num_studies", 200);
    const double pos_fraction = cfg.get_double("synth.pos_fraction", 0.5);
    const int n_min = cfg.get_int("synth.n_min", 16);
    const int n_max = cfg.get_int("synth.n_max", 32);
    const int clot_min = cfg.get_int("synth.clot_min", 3);
    const int clot_max = cfg.get_int("synth.clot_max", 6);
    const double distractor_prob = cfg.get_double("synth.distractor_prob", 0.7);
    const int distractor_min = cfg.get_int("synth.distractor_min", 1);
    const int distractor_max = cfg.get_int("synth.distractor_max", 2);
    if (num < 1) throw usage_error("synth.num_studies must be >= 1");
    if (n_min < 1 || n_max < n_min) throw usage_error("bad synth.n_min/n_max");
    if (clot_min < 1 || clot_max < clot_min) throw usage_error("bad synth.clot_min/clot_max");

    Rng rng(cfg.seed() ^ 0x53594e54u);
    std::vector<std::string> ids;
    for (int i = 0; i < num; ++i) {
        char buf[16];
        snprintf(buf, sizeof(buf), "s%04d", i);
        ids.emplace_back(buf);
    }
    const auto assignment = data::split_dataset(ids, cfg.split_fractions(), cfg.seed());
    std::map<std::string, data::Split> split_of;
    for (const auto& id : assignment.train) split_of[id] = data::Split::Train;
    for (const auto& id : assignment.val) split_of[id] = data::Split::Val;
    for (const auto& id : assignment.test) split_of[id] = data::Split::Test;

    for (int i = 0; i < num; ++i) {
        Rng study_rng = rng.fork(static_cast<uint64_t>(i) + 1);
        data::SyntheticSpec spec;
        spec.study_id = ids[i];
        spec.n = static_cast<int>(study_rng.uniform_int(n_min, n_max));
        spec.height = cfg.get_int("synth.height", 64);
        spec.width = cfg.get_int("synth.width", 64);
        spec.pe_present = study_rng.bernoulli(pos_fraction);
        if (spec.pe_present) {
            const double lat = study_rng.uniform();
            spec.laterality = lat < 0.4 ? data::Laterality::Left
                             : lat < 0.8 ? data::Laterality::Right
                                         : data::Laterality::Central;
            spec.rvlv_gte_1 = study_rng.bernoulli(0.4);
            const double chron = study_rng.uniform();
            spec.chronicity = chron < 0.7 ? data::Chronicity::AcuteOnly
                             : chron < 0.9 ? data::Chronicity::Chronic
                                           : data::Chronicity::AcuteAndChronic;
            spec.clot_slices = static_cast<int>(
                study_rng.uniform_int(clot_min, std::min(clot_max, spec.n)));
            // an isolated lookalike now and then keeps "any blob" from being
            // a study-level shortcut
            spec.distractor_slices = study_rng.bernoulli(0.15) ? 1 : 0;
        } else if (study_rng.bernoulli(distractor_prob)) {
            spec.distractor_slices = static_cast<int>(
                study_rng.uniform_int(distractor_min, std::max(distractor_min, distractor_max)));
        }

        const auto study = data::generate_synthetic_study(study_rng.next_u64(), spec);
        const fs::path dir = root / ids[i];
        data::save_study(dir, study.volume, &study.labels, split_of.at(ids[i]));
        data::write_boxes(dir / "clot_boxes.txt", study.clot_boxes);
    }
}

// ---------------------------------------------------------------------------
// preprocess

CacheStats preprocess(const config::RunConfig& cfg) {
    const auto manifests = data::scan_dataset(cfg.dataset_root());
    if (manifests.empty()) throw usage_error("dataset contains no studies");
    const auto windows = cfg.windows();
    const std::string wsig = window_signature(cfg);
    const bool export_u8 = cfg.get_bool("preprocess.export_u8", false);

    CacheStats stats;
    std::vector<std::string> failures;
    for (const auto& m : manifests) {
        try {
            const auto volume_bytes = io::read_binary(m.dir / "volume.i16");
            const uint64_t source_hash =
                io::fnv1a64(volume_bytes.data(), volume_bytes.size(), io::fnv1a64(wsig));

            const fs::path cache = windowed_cache_path(m.dir);
            const std::string meta = data::cache_meta_path_text(cache);
            if (fs::exists(cache) && meta_value(meta, "source_hash") == io::hash_hex(source_hash)) {
                ++stats.skipped;
                continue;
            }

            const auto study = data::load_study(m.dir);
            const auto& v = study.volume;
            std::vector<float> windowed;
            windowed.reserve(static_cast<size_t>(v.n) * 3 * v.slice_size());
            for (int k = 0; k < v.n; ++k) {
                const auto slice = windowing::to_three_channel(v.slice(k), v.height, v.width, windows);
                windowed.insert(windowed.end(), slice.channels.begin(), slice.channels.end());
            }

            std::ostringstream meta_out;
            meta_out << "source_hash=" << io::hash_hex(source_hash) << "\n"
                     << "config_hash=" << io::hash_hex(cfg.hash()) << "\n"
                     << "seed=" << cfg.seed() << "\n"
                     << "n=" << v.n << "\nheight=" << v.height << "\nwidth=" << v.width << "\n";
            data::write_f32_cache(cache, windowed, meta_out.str());

            if (export_u8) {
                std::vector<uint8_t> u8(windowed.size());
                for (size_t i = 0; i < windowed.size(); ++i)
                    u8[i] = static_cast<uint8_t>(std::lround(windowed[i] * 255.0f));
                io::write_binary(m.dir / "windowed.u8", u8.data(), u8.size());
            }
            ++stats.written;
        } catch (const Error& e) {
            failures.push_back(m.study_id + ": " + e.what());
        }
    }
    if (!failures.empty()) {
        std::string msg = "preprocess failed for " + std::to_string(failures.size()) + " studies:";
        for (const auto& f : failures) msg += "\n  " + f;
        throw data_error(msg);
    }
    return stats;
}

// ---------------------------------------------------------------------------
// loading helpers

std::vector<stage1::TrainStudy> load_train_studies(const config::RunConfig&,
                                                   const std::vector<data::StudyManifest>& studies) {
    std::vector<stage1::TrainStudy> out;
    for (const auto& m : studies) {
        const auto study = data::load_study(m.dir);
        if (!study.labels)
            throw usage_error("study '" + m.study_id + "' has no labels; training requires them");
        stage1::TrainStudy ts;
        ts.study_id = m.study_id;
        ts.n = study.volume.n;
        ts.height = study.volume.height;
        ts.width = study.volume.width;
        ts.labels = *study.labels;
        const fs::path cache = windowed_cache_path(m.dir);
        if (!fs::exists(cache))
            throw usage_error("study '" + m.study_id +
                              "' has no windowed cache; run `preprocess` first");
        ts.windowed = data::read_f32_cache(cache, static_cast<size_t>(ts.n) * 3 * ts.height * ts.width);
        out.push_back(std::move(ts));
    }
    return out;
}

std::vector<stage2::FeatureStudy> load_feature_studies(
    const config::RunConfig&, const std::vector<data::StudyManifest>& studies) {
    std::vector<stage2::FeatureStudy> out;
    std::vector<std::string> missing;
    for (const auto& m : studies) {
        const fs::path cache = embeddings_cache_path(m.dir);
        if (!fs::exists(cache)) {
            missing.push_back(m.study_id);
            continue;
        }
        const std::string meta = data::cache_meta_path_text(cache);
        const std::string d_str = meta_value(meta, "d");
        const std::string n_str = meta_value(meta, "n");
        if (d_str.empty() || n_str.empty())
            throw data_error("study '" + m.study_id + "': embeddings cache lacks metadata");

        stage2::FeatureStudy fsd;
        fsd.study_id = m.study_id;
        fsd.n = std::stoi(n_str);
        fsd.d = std::stoi(d_str);
        const auto raw = data::read_f32_cache(cache, static_cast<size_t>(fsd.n) * fsd.d);
        fsd.embeddings.assign(raw.begin(), raw.end());

        const auto study = data::load_study(m.dir);
        if (study.labels) fsd.labels = *study.labels;
        if (study.volume.n != fsd.n)
            throw data_error("study '" + m.study_id + "': embeddings cache is stale (n mismatch)");
        out.push_back(std::move(fsd));
    }
    if (!missing.empty()) {
        std::string msg = "missing feature caches for " + std::to_string(missing.size()) +
                          " studies (run `extract-features` first):";
        for (const auto& id : missing) msg += " " + id;
        throw usage_error(msg);
    }
    return out;
}

// ---------------------------------------------------------------------------
// train stage 1

stage1::Stage1TrainResult train_stage1_cmd(const config::RunConfig& cfg) {
    apply_determinism(cfg);
    write_run_snapshot(cfg);
    const auto manifests = data::scan_dataset(cfg.dataset_root());
    const auto splits = resolve_splits(cfg, manifests);

    const auto train = load_train_studies(cfg, splits.train);
    const auto val = load_train_studies(cfg, splits.val);

    auto settings = cfg.stage1_settings();
    auto result = stage1::train_stage1(train, val, settings);

    ckpt::save_stage1(stage1_ckpt_path(cfg), result.model, provenance(cfg));
    write_train_log(cfg.out_dir() / "stage1_train.log", cfg, result.log, result.best_epoch);
    return result;
}

// ---------------------------------------------------------------------------
// extract features

CacheStats extract_features(const config::RunConfig& cfg) {
    apply_determinism(cfg);
    const auto model = ckpt::load_stage1(stage1_ckpt_path(cfg));
    const uint64_t model_hash = ckpt::params_hash(model);
    const auto manifests = data::scan_dataset(cfg.dataset_root());

    CacheStats stats;
    for (const auto& m : manifests) {
        const fs::path wcache = windowed_cache_path(m.dir);
        if (!fs::exists(wcache))
            throw usage_error("study '" + m.study_id +
                              "' has no windowed cache; run `preprocess` first");
        const std::string wmeta = data::cache_meta_path_text(wcache);
        const int n = std::stoi(meta_value(wmeta, "n"));
        const int h = std::stoi(meta_value(wmeta, "height"));
        const int w = std::stoi(meta_value(wmeta, "width"));

        const fs::path ecache = embeddings_cache_path(m.dir);
        const std::string emeta = data::cache_meta_path_text(ecache);
        const std::string source_sig =
            meta_value(wmeta, "source_hash") + "+" + io::hash_hex(model_hash);
        if (fs::exists(ecache) && meta_value(emeta, "source") == source_sig) {
            ++stats.skipped;
            continue;
        }

        const auto windowed =
            data::read_f32_cache(wcache, static_cast<size_t>(n) * 3 * h * w);
        std::vector<float> flat(static_cast<size_t>(n) * model.d);
        #pragma omp parallel for schedule(dynamic)
        for (int k = 0; k < n; ++k) {
            const auto emb = stage1::extract_embedding(
                model, windowed.data() + static_cast<size_t>(k) * 3 * h * w, h, w);
            for (int j = 0; j < model.d; ++j)
                flat[static_cast<size_t>(k) * model.d + j] = static_cast<float>(emb[j]);
        }

        std::ostringstream meta_out;
        meta_out << "source=" << source_sig << "\n"
                 << "config_hash=" << io::hash_hex(cfg.hash()) << "\n"
                 << "seed=" << cfg.seed() << "\n"
                 << "n=" << n << "\nd=" << model.d << "\n";
        data::write_f32_cache(ecache, flat, meta_out.str());
        ++stats.written;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// train stage 2

stage2::Stage2TrainResult train_stage2_cmd(const config::RunConfig& cfg) {
    apply_determinism(cfg);
    write_run_snapshot(cfg);
    const auto manifests = data::scan_dataset(cfg.dataset_root());
    const auto splits = resolve_splits(cfg, manifests);

    const auto train = load_feature_studies(cfg, splits.train);
    const auto val = load_feature_studies(cfg, splits.val);
    if (train.empty()) throw usage_error("no training studies");

    auto settings = cfg.stage2_settings();
    settings.d = train[0].d;
    auto result = stage2::train_stage2(train, val, settings);

    ckpt::save_stage2(stage2_ckpt_path(cfg), result.model, provenance(cfg));
    write_train_log(cfg.out_dir() / "stage2_train.log", cfg, result.log, result.best_epoch);
    return result;
}

// ---------------------------------------------------------------------------
// predict

std::filesystem::path predict(const config::RunConfig& cfg, data::Split split) {
    apply_determinism(cfg);
    write_run_snapshot(cfg);
    const auto model1 = ckpt::load_stage1(stage1_ckpt_path(cfg));
    const auto model2 = ckpt::load_stage2(stage2_ckpt_path(cfg));
    if (model1.d != model2.d)
        throw usage_error("checkpoint mismatch: stage1 d=" + std::to_string(model1.d) +
                          " but stage2 expects d=" + std::to_string(model2.d));

    const auto manifests = data::scan_dataset(cfg.dataset_root());
    const auto splits = resolve_splits(cfg, manifests);
    const auto& chosen = splits.of(split);
    if (chosen.empty()) throw usage_error(std::string("split '") + data::split_name(split) + "' is empty");

    const auto studies = load_feature_studies(cfg, chosen);

    std::ostringstream out;
    out.precision(10);
    out << "# ctpe-predictions v1\n";
    out << "# config_hash=" << io::hash_hex(cfg.hash()) << " seed=" << cfg.seed() << " split="
        << data::split_name(split) << "\n";
    out << "# study_id enforced[9] raw[9] image_probs[n] attention[n]\n";

    std::ostringstream bags;
    bags.precision(10);
    bags << "# study_id,pe_truth,bag_features[m]\n";

    for (const auto& s : studies) {
        if (s.d != model2.d)
            throw data_error("study '" + s.study_id + "': cached d=" + std::to_string(s.d) +
                             " but stage2 expects d=" + std::to_string(model2.d));
        const auto pred = stage2::predict_study(model2, s.embeddings, s.n, s.d);
        const auto enforced = consistency::enforce(pred.preds);

        std::vector<double> raw9(pred.preds.study_probs.begin(), pred.preds.study_probs.end());
        std::vector<double> enf9(enforced.study_probs.begin(), enforced.study_probs.end());
        out << s.study_id << " " << io::join_csv(enf9, 10) << " " << io::join_csv(raw9, 10) << " "
            << io::join_csv(pred.preds.image_probs, 10) << " "
            << io::join_csv(pred.attention.weights, 10) << "\n";

        const int truth = s.labels.image_pe.empty()
                              ? -1
                              : (s.labels.study[labels::kNegativeForPe] ? 0 : 1);
        bags << s.study_id << "," << truth << "," << io::join_csv(pred.attention.bag, 10) << "\n";
    }

    const fs::path path = predictions_path(cfg, split);
    io::write_text(path, out.str());
    io::write_text(cfg.out_dir() / (std::string("bags_") + data::split_name(split) + ".csv"),
                   bags.str());
    return path;
}

std::vector<PredictionRecord> read_predictions(const fs::path& path) {
    if (!fs::exists(path)) throw usage_error("predictions file not found: " + path.string());
    std::vector<PredictionRecord> out;
    std::istringstream ss(io::read_text(path));
    std::string line;
    while (std::getline(ss, line)) {
        line = io::trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id, enf, raw, img, att;
        if (!(ls >> id >> enf >> raw >> img >> att))
            throw data_error("malformed prediction record: '" + line + "'");
        PredictionRecord rec;
        rec.study_id = id;
        const auto enf_v = io::parse_csv_doubles(enf);
        const auto raw_v = io::parse_csv_doubles(raw);
        if (enf_v.size() != labels::kNumStudyLabels || raw_v.size() != labels::kNumStudyLabels)
            throw data_error("prediction record for '" + id + "' must carry 9 study probabilities");
        std::copy(enf_v.begin(), enf_v.end(), rec.enforced.begin());
        std::copy(raw_v.begin(), raw_v.end(), rec.raw.begin());
        rec.image_probs = io::parse_csv_doubles(img);
        rec.attention = io::parse_csv_doubles(att);
        if (rec.attention.size() != rec.image_probs.size())
            throw data_error("prediction record for '" + id + "': attention/image count mismatch");
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluate

evaluate::MetricsReport evaluate_cmd(const config::RunConfig& cfg, data::Split split) {
    apply_determinism(cfg);
    const auto records_in = read_predictions(predictions_path(cfg, split));

    const auto manifests = data::scan_dataset(cfg.dataset_root());
    std::map<std::string, const data::StudyManifest*> by_id;
    for (const auto& m : manifests) by_id[m.study_id] = &m;

    std::vector<evaluate::StudyRecord> records;
    for (const auto& rec : records_in) {
        auto it = by_id.find(rec.study_id);
        if (it == by_id.end())
            throw data_error("predictions refer to unknown study '" + rec.study_id + "'");
        const auto study = data::load_study(it->second->dir);
        if (!study.labels)
            throw usage_error("study '" + rec.study_id + "' has no labels; evaluate requires them");
        evaluate::StudyRecord r;
        r.study_id = rec.study_id;
        r.study_probs = rec.enforced;
        r.image_probs = rec.image_probs;
        r.truth = *study.labels;
        records.push_back(std::move(r));
    }

    auto report = evaluate::evaluate_records(records);

    const std::string split_tag = data::split_name(split);
    io::write_text(cfg.out_dir() / ("metrics_" + split_tag + ".csv"),
                   "# config_hash=" + io::hash_hex(cfg.hash()) + " seed=" +
                       std::to_string(cfg.seed()) + "\n" + evaluate::format_metrics_csv(report));

    for (const auto& curve : report.curves) {
        std::ostringstream ss;
        ss << "threshold,fpr,tpr\n";
        ss.precision(10);
        for (size_t i = 0; i < curve.fpr.size(); ++i)
            ss << curve.thresholds[i] << "," << curve.fpr[i] << "," << curve.tpr[i] << "\n";
        io::write_text(cfg.out_dir() / ("roc_" + curve.label + "_" + split_tag + ".csv"), ss.str());
    }

    // 2-D embedding of bag features, when predict exported them
    const fs::path bags_path = cfg.out_dir() / ("bags_" + split_tag + ".csv");
    if (fs::exists(bags_path)) {
        std::vector<std::string> ids;
        std::vector<int> truths;
        std::vector<std::vector<double>> bags;
        std::istringstream ss(io::read_text(bags_path));
        std::string line;
        while (std::getline(ss, line)) {
            line = io::trim(line);
            if (line.empty() || line[0] == '#') continue;
            const auto comma1 = line.find(',');
            const auto comma2 = line.find(',', comma1 + 1);
            ids.push_back(line.substr(0, comma1));
            truths.push_back(std::stoi(line.substr(comma1 + 1, comma2 - comma1 - 1)));
            bags.push_back(io::parse_csv_doubles(line.substr(comma2 + 1)));
        }
        if (bags.size() >= 2) {
            const std::string method = cfg.get("embed.method", "tsne");
            const auto coords = evaluate::embed_bags_2d(bags, cfg.seed(), method);
            std::ostringstream es;
            es << "# method=" << method << "\nstudy_id,x,y,pe_truth\n";
            es.precision(10);
            for (size_t i = 0; i < coords.size(); ++i)
                es << ids[i] << "," << coords[i][0] << "," << coords[i][1] << "," << truths[i] << "\n";
            io::write_text(cfg.out_dir() / ("embed2d_" + split_tag + ".csv"), es.str());
        }
    }

    // CAM overlays for a few PE-positive slices
    const int cam_count = cfg.get_int("evaluate.cam_count", 4);
    if (cam_count > 0 && fs::exists(stage1_ckpt_path(cfg))) {
        const auto model = ckpt::load_stage1(stage1_ckpt_path(cfg));
        int exported = 0;
        for (const auto& rec : records) {
            if (exported >= cam_count) break;
            if (!rec.truth.any_image_positive()) continue;
            const auto& m = *by_id.at(rec.study_id);
            const fs::path wcache = windowed_cache_path(m.dir);
            if (!fs::exists(wcache)) continue;
            const std::string wmeta = data::cache_meta_path_text(wcache);
            const int n = std::stoi(meta_value(wmeta, "n"));
            const int h = std::stoi(meta_value(wmeta, "height"));
            const int w = std::stoi(meta_value(wmeta, "width"));
            if (h != model.input_h || w != model.input_w) continue;
            const auto windowed = data::read_f32_cache(wcache, static_cast<size_t>(n) * 3 * h * w);
            for (int k = 0; k < n && exported < cam_count; ++k) {
                if (!rec.truth.image_pe[k]) continue;
                const auto cam = evaluate::compute_cam(
                    model, windowed.data() + static_cast<size_t>(k) * 3 * h * w, h, w);
                std::ostringstream ps;
                ps << "P2\n" << w << " " << h << "\n255\n";
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x)
                        ps << static_cast<int>(std::lround(cam.overlay[y * w + x] * 255.0)) << " ";
                    ps << "\n";
                }
                io::write_text(cfg.out_dir() / ("cam_" + rec.study_id + "_slice" +
                                                std::to_string(k) + "_" + split_tag + ".pgm"),
                               ps.str());
                ++exported;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// check-consistency

int check_consistency(const fs::path& predictions_file, bool use_raw, std::ostream& report) {
    const auto records = read_predictions(predictions_file);
    int total = 0;
    for (const auto& rec : records) {
        consistency::PredictionSet preds;
        preds.image_probs = rec.image_probs;
        preds.study_probs = use_raw ? rec.raw : rec.enforced;
        const auto result = consistency::validate(preds);
        for (const auto& v : result.violations) {
            report << rec.study_id << "," << v.rule_id << "," << v.description << "\n";
            ++total;
        }
    }
    return total;
}

} // namespace ctpe::runner
