#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pipebench/common.hpp"
#include "pipebench/nn.hpp"

namespace pipebench {

// Checkpoint layout (little-endian):
//   magic "PBCK", u32 version, u32 spec_len, spec JSON,
//   u32 n_tensors, then per tensor:
//   u16 name_len, name, u8 ndims, u32 dims..., float32 row-major data.
inline constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const std::string& spec_json,
                            const ParamRefs<float>& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    f.write("PBCK", 4);
    put_u32(kCheckpointVersion);
    put_u32(static_cast<uint32_t>(spec_json.size()));
    f.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));
    put_u32(static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
        auto name_len = static_cast<uint16_t>(p->name.size());
        f.write(reinterpret_cast<const char*>(&name_len), 2);
        f.write(p->name.data(), name_len);
        auto ndims = static_cast<uint8_t>(p->w.shape.size());
        f.write(reinterpret_cast<const char*>(&ndims), 1);
        for (int d : p->w.shape) put_u32(static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(p->w.v.data()),
                static_cast<std::streamsize>(p->w.numel() * sizeof(float)));
    }
    if (!f) throw DataError("checkpoint write failed: " + path);
}

// Returns the embedded spec JSON; parameters are loaded by name into `params`.
inline std::string load_checkpoint(const std::string& path, const ParamRefs<float>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "PBCK") throw DataError("not a checkpoint file: " + path);
    auto get_u32 = [&]() {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    uint32_t version = get_u32();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t spec_len = get_u32();
    std::string spec_json(spec_len, '\0');
    f.read(spec_json.data(), spec_len);

    uint32_t n = get_u32();
    if (n != params.size())
        throw DataError("checkpoint tensor count mismatch in " + path + ": file has " +
                        std::to_string(n) + ", model has " + std::to_string(params.size()));
    for (uint32_t i = 0; i < n; ++i) {
        uint16_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), 2);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint8_t ndims = 0;
        f.read(reinterpret_cast<char*>(&ndims), 1);
        std::vector<int> shape(ndims);
        for (auto& d : shape) d = static_cast<int>(get_u32());
        Param<float>* p = params[i];
        if (p->name != name)
            throw DataError("checkpoint tensor order mismatch in " + path + ": expected " + p->name +
                            ", found " + name);
        if (p->w.shape != shape)
            throw DataError("checkpoint shape mismatch for " + name + " in " + path);
        f.read(reinterpret_cast<char*>(p->w.v.data()),
               static_cast<std::streamsize>(p->w.numel() * sizeof(float)));
    }
    if (!f) throw DataError("truncated checkpoint: " + path);
    return spec_json;
}

}  // namespace pipebench
