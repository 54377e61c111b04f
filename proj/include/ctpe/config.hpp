#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "ctpe/data.hpp"
#include "ctpe/loss.hpp"
#include "ctpe/stage1.hpp"
#include "ctpe/stage2.hpp"
#include "ctpe/windowing.hpp"

namespace ctpe::config {

// Plain-text key=value run configuration. Unknown keys are rejected.
class RunConfig {
public:
    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_text(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    void set(const std::string& key, const std::string& value);

    // sorted key=value lines; hashing this makes the hash layout-insensitive
    std::string canonical_text() const;
    uint64_t hash() const;

    std::filesystem::path dataset_root() const { return require("dataset_root"); }
    std::filesystem::path out_dir() const { return require("out_dir"); }
    uint64_t seed() const { return get_u64("seed", 1234); }
    bool deterministic() const { return get_bool("deterministic", true); }

    std::array<windowing::WindowSpec, 3> windows() const;
    loss::LabelWeights label_weights() const;
    data::SplitFractions split_fractions() const;
    stage1::Stage1Settings stage1_settings() const;
    stage2::Stage2Settings stage2_settings() const;

    // "key description" pairs for all recognized keys
    static const std::map<std::string, std::string>& known_keys();

private:
    std::map<std::string, std::string> kv_;
};

// Template with the desk-scale defaults, written by `ctpe init-config`.
std::string default_config_text();

} // namespace ctpe::config
