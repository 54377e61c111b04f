#include "ctpe/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ctpe/error.hpp"
#include "ctpe/io.hpp"

namespace ctpe::ckpt {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'P', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

class Writer {
public:
    void u32(uint32_t v) { raw(&v, sizeof(v)); }
    void u64(uint64_t v) { raw(&v, sizeof(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const std::string& name, const std::vector<double>& v) {
        str(name);
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void raw(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

    uint32_t u32() { uint32_t v; raw(&v, sizeof(v)); return v; }
    uint64_t u64() { uint64_t v; raw(&v, sizeof(v)); return v; }
    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<double> tensor(const std::string& expected) {
        const std::string name = str();
        if (name != expected)
            throw data_error("checkpoint: expected tensor '" + expected + "', found '" + name + "'");
        std::vector<double> v(u64());
        raw(v.data(), v.size() * sizeof(double));
        return v;
    }
    void raw(void* p, size_t n) {
        if (pos_ + n > buf_.size()) throw data_error("checkpoint: truncated file");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

private:
    std::vector<char> buf_;
    size_t pos_ = 0;
};

void write_header(Writer& w, uint32_t stage, const Provenance& prov) {
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);
    w.u32(stage);
    w.u64(prov.config_hash);
    w.u64(prov.seed);
    w.u32(labels::kNumStudyLabels);
    for (int j = 0; j < labels::kNumStudyLabels; ++j) w.str(labels::study_label_name(j));
    w.str(prov.config_text);
}

Reader open_checkpoint(const std::filesystem::path& path, uint32_t expected_stage,
                       Provenance* prov) {
    if (!std::filesystem::exists(path))
        throw usage_error("checkpoint not found: " + path.string());
    Reader r(io::read_binary(path));
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw data_error("not a ctpe checkpoint: " + path.string());
    if (r.u32() != kVersion) throw data_error("unsupported checkpoint version: " + path.string());
    const uint32_t stage = r.u32();
    if (stage != expected_stage)
        throw usage_error(path.string() + " is a stage-" + std::to_string(stage) +
                          " checkpoint, expected stage " + std::to_string(expected_stage));
    Provenance local;
    local.config_hash = r.u64();
    local.seed = r.u64();
    const uint32_t nlabels = r.u32();
    if (nlabels != labels::kNumStudyLabels)
        throw data_error("checkpoint label count mismatch: " + path.string());
    for (int j = 0; j < labels::kNumStudyLabels; ++j) {
        const std::string name = r.str();
        if (name != labels::study_label_name(j))
            throw data_error("checkpoint label ordering mismatch at index " + std::to_string(j) +
                             ": '" + name + "'");
    }
    local.config_text = r.str();
    if (prov) *prov = local;
    return r;
}

} // namespace

void save_stage1(const std::filesystem::path& path, const stage1::Stage1Model& model,
                 const Provenance& prov) {
    Writer w;
    write_header(w, 1, prov);
    w.str(model.backbone);
    w.u32(static_cast<uint32_t>(model.input_h));
    w.u32(static_cast<uint32_t>(model.input_w));
    w.u32(static_cast<uint32_t>(model.d));
    w.u32(model.input_standardize ? 1 : 0);
    w.u32(static_cast<uint32_t>(model.convs.size()));
    for (size_t i = 0; i < model.convs.size(); ++i) {
        const auto& layer = model.convs[i];
        w.u32(static_cast<uint32_t>(layer.in_c));
        w.u32(static_cast<uint32_t>(layer.out_c));
        w.u32(static_cast<uint32_t>(layer.stride));
        w.tensor("conv" + std::to_string(i) + ".w", layer.w);
        w.tensor("conv" + std::to_string(i) + ".b", layer.b);
    }
    w.tensor("head.w", model.head_w);
    w.tensor("head.b", model.head_b);
    io::write_binary(path, w.buffer().data(), w.buffer().size());
}

stage1::Stage1Model load_stage1(const std::filesystem::path& path, Provenance* prov) {
    Reader r = open_checkpoint(path, 1, prov);
    stage1::Stage1Model model;
    model.backbone = r.str();
    model.input_h = static_cast<int>(r.u32());
    model.input_w = static_cast<int>(r.u32());
    model.d = static_cast<int>(r.u32());
    model.input_standardize = r.u32() != 0;
    const uint32_t layers = r.u32();
    for (uint32_t i = 0; i < layers; ++i) {
        stage1::ConvLayer layer;
        layer.in_c = static_cast<int>(r.u32());
        layer.out_c = static_cast<int>(r.u32());
        layer.stride = static_cast<int>(r.u32());
        layer.w = r.tensor("conv" + std::to_string(i) + ".w");
        layer.b = r.tensor("conv" + std::to_string(i) + ".b");
        model.convs.push_back(std::move(layer));
    }
    model.head_w = r.tensor("head.w");
    model.head_b = r.tensor("head.b");
    return model;
}

void save_stage2(const std::filesystem::path& path, const stage2::Stage2Model& model,
                 const Provenance& prov) {
    Writer w;
    write_header(w, 2, prov);
    w.u32(static_cast<uint32_t>(model.d));
    w.u32(static_cast<uint32_t>(model.hidden));
    w.u32(static_cast<uint32_t>(model.m));
    w.u32(static_cast<uint32_t>(model.r));
    w.u32(model.pooling == stage2::Pooling::Attention ? 0 : 1);
    w.tensor("fwd.wx", model.fwd_wx);
    w.tensor("fwd.wh", model.fwd_wh);
    w.tensor("fwd.b", model.fwd_b);
    w.tensor("bwd.wx", model.bwd_wx);
    w.tensor("bwd.wh", model.bwd_wh);
    w.tensor("bwd.b", model.bwd_b);
    w.tensor("dense.w", model.dense_w);
    w.tensor("dense.b", model.dense_b);
    w.tensor("attn.v", model.attn.v);
    w.tensor("attn.w", model.attn.w);
    w.tensor("img.w", model.img_w);
    w.tensor("img.b", {model.img_b});
    w.tensor("study.w", model.study_w);
    w.tensor("study.b", model.study_b);
    io::write_binary(path, w.buffer().data(), w.buffer().size());
}

stage2::Stage2Model load_stage2(const std::filesystem::path& path, Provenance* prov) {
    Reader r = open_checkpoint(path, 2, prov);
    stage2::Stage2Model model;
    model.d = static_cast<int>(r.u32());
    model.hidden = static_cast<int>(r.u32());
    model.m = static_cast<int>(r.u32());
    model.r = static_cast<int>(r.u32());
    model.pooling = r.u32() == 0 ? stage2::Pooling::Attention : stage2::Pooling::Mean;
    model.fwd_wx = r.tensor("fwd.wx");
    model.fwd_wh = r.tensor("fwd.wh");
    model.fwd_b = r.tensor("fwd.b");
    model.bwd_wx = r.tensor("bwd.wx");
    model.bwd_wh = r.tensor("bwd.wh");
    model.bwd_b = r.tensor("bwd.b");
    model.dense_w = r.tensor("dense.w");
    model.dense_b = r.tensor("dense.b");
    model.attn.v = r.tensor("attn.v");
    model.attn.w = r.tensor("attn.w");
    model.attn.r = model.r;
    model.attn.m = model.m;
    model.img_w = r.tensor("img.w");
    model.img_b = r.tensor("img.b").at(0);
    model.study_w = r.tensor("study.w");
    model.study_b = r.tensor("study.b");
    return model;
}

uint64_t params_hash(const stage1::Stage1Model& model) {
    uint64_t h = io::fnv1a64(model.backbone);
    for (const auto& layer : model.convs) {
        h = io::fnv1a64(layer.w.data(), layer.w.size() * sizeof(double), h);
        h = io::fnv1a64(layer.b.data(), layer.b.size() * sizeof(double), h);
    }
    h = io::fnv1a64(model.head_w.data(), model.head_w.size() * sizeof(double), h);
    h = io::fnv1a64(model.head_b.data(), model.head_b.size() * sizeof(double), h);
    return h;
}

uint64_t params_hash(const stage2::Stage2Model& model) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* t : {&model.fwd_wx, &model.fwd_wh, &model.fwd_b, &model.bwd_wx,
                          &model.bwd_wh, &model.bwd_b, &model.dense_w, &model.dense_b,
                          &model.attn.v, &model.attn.w, &model.img_w, &model.study_w,
                          &model.study_b})
        h = io::fnv1a64(t->data(), t->size() * sizeof(double), h);
    return h;
}

} // namespace ctpe::ckpt
