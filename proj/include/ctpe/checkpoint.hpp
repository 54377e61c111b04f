#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ctpe/stage1.hpp"
#include "ctpe/stage2.hpp"

namespace ctpe::ckpt {

// Binary checkpoints: header (magic, version, stage, config hash, seed,
// label ordering, config snapshot) followed by named little-endian double
// tensors.
struct Provenance {
    std::string config_text;
    uint64_t config_hash = 0;
    uint64_t seed = 0;
};

void save_stage1(const std::filesystem::path& path, const stage1::Stage1Model& model,
                 const Provenance& prov);
stage1::Stage1Model load_stage1(const std::filesystem::path& path, Provenance* prov = nullptr);

void save_stage2(const std::filesystem::path& path, const stage2::Stage2Model& model,
                 const Provenance& prov);
stage2::Stage2Model load_stage2(const std::filesystem::path& path, Provenance* prov = nullptr);

// Hash of the serialized parameters, used for cache-staleness checks.
uint64_t params_hash(const stage1::Stage1Model& model);
uint64_t params_hash(const stage2::Stage2Model& model);

} // namespace ctpe::ckpt
