#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/denoiser.hpp"
#include "minediff/rng.hpp"

namespace minediff {

struct CheckpointFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace ckptio {

constexpr char kMagic[4] = {'M', 'D', 'C', 'P'};
constexpr uint32_t kVersion = 1;

inline void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); }
inline void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); }
inline void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); }

inline void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

inline void put_tensor(std::string& out, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : t.v) put_f64(out, v);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw CheckpointFormatError("checkpoint: truncated payload");
    }
    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        const uint32_t rank = u32();
        std::vector<int> shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(u32()));
        Tensor t(shape);
        for (double& v : t.v) v = f64();
        return t;
    }
};

inline std::string encode_payload(const DenoiserCheckpoint& ckpt) {
    std::string p;
    put_string(p, ckpt.prov.stage);
    put_u64(p, ckpt.prov.config_hash);
    put_u64(p, ckpt.prov.parent_hash);
    put_u32(p, static_cast<uint32_t>(ckpt.dims.data_dim));
    put_u32(p, static_cast<uint32_t>(ckpt.dims.embed_dim));
    put_u32(p, static_cast<uint32_t>(ckpt.dims.trunk_width));
    put_u32(p, static_cast<uint32_t>(ckpt.dims.attn_dim));
    put_u32(p, static_cast<uint32_t>(ckpt.dims.time_dim));
    put_u32(p, static_cast<uint32_t>(ckpt.dims.lora_rank));
    put_f64(p, ckpt.dims.input_scale);
    put_u32(p, static_cast<uint32_t>(ckpt.schedule.T));
    for (double b : ckpt.schedule.betas) put_f64(p, b);
    put_u32(p, static_cast<uint32_t>(ckpt.vocab.tokens.size()));
    for (const auto& t : ckpt.vocab.tokens) put_string(p, t);
    put_u32(p, static_cast<uint32_t>(ckpt.vocab.dim));
    put_tensor(p, ckpt.vocab.embedding_table);
    put_u32(p, static_cast<uint32_t>(ckpt.params.values.size()));
    for (const auto& [name, t] : ckpt.params.values) {
        put_string(p, name);
        p.push_back(ckpt.params.is_frozen(name) ? 1 : 0);
        put_tensor(p, t);
    }
    p.push_back(ckpt.has_adapters ? 1 : 0);
    return p;
}

}  // namespace ckptio

inline void save_checkpoint(const std::string& path, const DenoiserCheckpoint& ckpt) {
    const std::string payload = ckptio::encode_payload(ckpt);
    std::string out;
    out.append(ckptio::kMagic, 4);
    ckptio::put_u32(out, ckptio::kVersion);
    ckptio::put_u64(out, payload.size());
    out += payload;
    ckptio::put_u64(out, fnv1a64(payload.data(), payload.size()));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write for checkpoint: " + path);
}

inline DenoiserCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string raw = ss.str();
    if (raw.size() < 16 || std::memcmp(raw.data(), ckptio::kMagic, 4) != 0) {
        throw CheckpointFormatError("checkpoint: bad magic in " + path);
    }
    uint32_t version;
    std::memcpy(&version, raw.data() + 4, 4);
    if (version != ckptio::kVersion) {
        throw CheckpointFormatError("checkpoint: version mismatch (file " + std::to_string(version) + ", supported " +
                                    std::to_string(ckptio::kVersion) + ")");
    }
    uint64_t payload_size;
    std::memcpy(&payload_size, raw.data() + 8, 8);
    if (raw.size() != 16 + payload_size + 8) throw CheckpointFormatError("checkpoint: size mismatch in " + path);
    const std::string payload = raw.substr(16, payload_size);
    uint64_t checksum;
    std::memcpy(&checksum, raw.data() + 16 + payload_size, 8);
    if (checksum != fnv1a64(payload.data(), payload.size())) {
        throw CheckpointFormatError("checkpoint: checksum mismatch (corrupt file " + path + ")");
    }

    ckptio::Reader r{payload};
    DenoiserCheckpoint ckpt;
    ckpt.prov.stage = r.str();
    ckpt.prov.config_hash = r.u64();
    ckpt.prov.parent_hash = r.u64();
    ckpt.dims.data_dim = static_cast<int>(r.u32());
    ckpt.dims.embed_dim = static_cast<int>(r.u32());
    ckpt.dims.trunk_width = static_cast<int>(r.u32());
    ckpt.dims.attn_dim = static_cast<int>(r.u32());
    ckpt.dims.time_dim = static_cast<int>(r.u32());
    ckpt.dims.lora_rank = static_cast<int>(r.u32());
    ckpt.dims.input_scale = r.f64();
    const int T = static_cast<int>(r.u32());
    ckpt.schedule.T = T;
    ckpt.schedule.betas.resize(static_cast<size_t>(T));
    ckpt.schedule.alphas.resize(static_cast<size_t>(T));
    ckpt.schedule.alpha_bars.resize(static_cast<size_t>(T));
    double bar = 1.0;
    for (int t = 0; t < T; ++t) {
        const double beta = r.f64();
        ckpt.schedule.betas[static_cast<size_t>(t)] = beta;
        ckpt.schedule.alphas[static_cast<size_t>(t)] = 1.0 - beta;
        bar *= 1.0 - beta;
        ckpt.schedule.alpha_bars[static_cast<size_t>(t)] = bar;
    }
    const uint32_t ntok = r.u32();
    for (uint32_t i = 0; i < ntok; ++i) ckpt.vocab.tokens.push_back(r.str());
    ckpt.vocab.dim = static_cast<int>(r.u32());
    ckpt.vocab.embedding_table = r.tensor();
    ckpt.vocab.rebuild_index();
    const uint32_t nparams = r.u32();
    for (uint32_t i = 0; i < nparams; ++i) {
        const std::string name = r.str();
        r.need(1);
        const bool frozen = payload[r.pos++] != 0;
        ckpt.params.insert(name, r.tensor(), frozen);
    }
    r.need(1);
    ckpt.has_adapters = payload[r.pos++] != 0;
    return ckpt;
}

}  // namespace minediff
