#pragma once

// Versioned binary checkpoint container shared by the denoiser, autoencoder,
// and detector. One file holds {format version, kind tag, config JSON,
// metadata JSON, named float32 parameter blobs}.
//
// Layout (all integers little-endian):
//   8 bytes   magic "LDLABCKP"
//   u32       format version (currently 1)
//   u32+bytes kind tag (utf-8)
//   u64+bytes config JSON (utf-8)
//   u64+bytes metadata JSON (utf-8)
//   u32       blob count
//   per blob: u32+bytes name; u32 rank; i64 dims[rank]; f32 data[numel]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ldlab/core/error.hpp"
#include "ldlab/core/tensor.hpp"
#include "ldlab/nn/modules.hpp"

namespace ldlab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'L', 'D', 'L', 'A', 'B', 'C', 'K', 'P'};

struct Checkpoint {
    std::string kind;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<float>>> blobs;

    const Tensor<float>& blob(const std::string& name) const {
        for (const auto& [n, t] : blobs)
            if (n == name) return t;
        fail(Err::CheckpointMismatch, "checkpoint has no blob named " + name);
    }
};

namespace detail {

template <typename T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

inline void put_str32(std::string& out, const std::string& s) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

inline void put_str64(std::string& out, const std::string& s) {
    put_raw<std::uint64_t>(out, s.size());
    out.append(s);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    template <typename T>
    T get_raw() {
        require(pos + sizeof(T) <= buf.size(), Err::BadFormat, "checkpoint truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_bytes(std::size_t n) {
        require(pos + n <= buf.size(), Err::BadFormat, "checkpoint truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }

    std::string get_str32() { return get_bytes(get_raw<std::uint32_t>()); }
    std::string get_str64() {
        const std::uint64_t n = get_raw<std::uint64_t>();
        require(n <= buf.size(), Err::BadFormat, "checkpoint length field out of range");
        return get_bytes(static_cast<std::size_t>(n));
    }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_raw<std::uint32_t>(out, kCheckpointVersion);
    detail::put_str32(out, ckpt.kind);
    detail::put_str64(out, ckpt.config.dump());
    detail::put_str64(out, ckpt.meta.dump());
    detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
    for (const auto& [name, t] : ckpt.blobs) {
        detail::put_str32(out, name);
        detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.dims) detail::put_raw<std::int64_t>(out, d);
        const std::size_t bytes = t.v.size() * sizeof(float);
        const std::size_t at = out.size();
        out.resize(at + bytes);
        if (bytes > 0) std::memcpy(out.data() + at, t.v.data(), bytes);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), Err::IoError, "cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    require(f.good(), Err::IoError, "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), Err::IoError, "cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(!f.bad(), Err::IoError, "read failed: " + path);

    detail::ByteReader r{buf};
    const std::string magic = r.get_bytes(sizeof(kCheckpointMagic));
    require(std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
            Err::BadFormat, "not a checkpoint file: " + path);
    const auto version = r.get_raw<std::uint32_t>();
    require(version == kCheckpointVersion, Err::CheckpointMismatch,
            "unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.kind = r.get_str32();
    try {
        ckpt.config = nlohmann::json::parse(r.get_str64());
        ckpt.meta = nlohmann::json::parse(r.get_str64());
    } catch (const nlohmann::json::exception& e) {
        fail(Err::BadFormat, std::string("checkpoint JSON section corrupt: ") + e.what());
    }
    const auto nblobs = r.get_raw<std::uint32_t>();
    ckpt.blobs.reserve(nblobs);
    for (std::uint32_t bi = 0; bi < nblobs; ++bi) {
        std::string name = r.get_str32();
        const auto rank = r.get_raw<std::uint32_t>();
        require(rank <= 8, Err::BadFormat, "blob rank out of range");
        std::vector<int> dims(rank);
        std::size_t numel = 1;
        for (auto& d : dims) {
            const auto dd = r.get_raw<std::int64_t>();
            require(dd > 0 && dd < (std::int64_t{1} << 31), Err::BadFormat, "blob dim out of range");
            d = static_cast<int>(dd);
            numel *= static_cast<std::size_t>(d);
        }
        require(numel <= (buf.size() - r.pos) / sizeof(float) + 1, Err::BadFormat, "blob data truncated");
        Tensor<float> t(dims);
        for (auto& x : t.v) x = r.get_raw<float>();
        ckpt.blobs.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

// Copy a parameter store's current values into checkpoint blobs, preserving
// registration order.
template <typename S>
void store_params(Checkpoint& ckpt, const nn::ParamStore<S>& params) {
    for (const auto& [name, p] : params.items)
        ckpt.blobs.emplace_back(name, p.node->val.template cast<float>());
}

// Restore blob values into an already-built parameter store. Names, order,
// and shapes must match exactly.
template <typename S>
void load_params(const Checkpoint& ckpt, nn::ParamStore<S>& params) {
    require(ckpt.blobs.size() == params.items.size(), Err::CheckpointMismatch,
            "checkpoint holds " + std::to_string(ckpt.blobs.size()) + " blobs, model expects " +
                std::to_string(params.items.size()));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        const auto& [bname, bval] = ckpt.blobs[i];
        auto& [pname, pvar] = params.items[i];
        require(bname == pname, Err::CheckpointMismatch,
                "parameter name mismatch: checkpoint " + bname + " vs model " + pname);
        require(bval.dims == pvar.node->val.dims, Err::CheckpointMismatch,
                "parameter shape mismatch for " + pname);
        pvar.node->val = bval.template cast<S>();
    }
}

}  // namespace ldlab
