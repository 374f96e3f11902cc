#pragma once

// Binary checkpoint:
//   "AVLMCKPT" | u32 version | u32 engine | u32 embed_dim | f64 alpha
//   | u32 entry count | entries { u32 name length, name, u64 offset, u64 length }
//   | little-endian float32 blobs
// Offsets are absolute, lengths in bytes. The "arch" blob records the
// remaining model dimensions. A JSON sidecar (<file>.json) carries the run
// seed, a config echo and training metadata.

#include <algorithm>
#include <array>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "encoders.hpp"
#include "errors.hpp"

namespace avlm {

inline constexpr std::array<char, 8> kCheckpointMagic{'A', 'V', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline std::vector<float> arch_blob(const ModelConfig& c) {
    return {float(c.image_height), float(c.image_width), float(c.patch_proj_dim), float(c.conv1_channels),
            float(c.conv2_channels), float(c.image_hidden), float(c.token_dim), float(c.text_hidden),
            float(c.vocab_size)};
}

}  // namespace ckpt_detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelParams& p) {
    struct Blob {
        std::string name;
        std::vector<float> data;
    };
    std::vector<Blob> blobs;
    blobs.push_back({"arch", ckpt_detail::arch_blob(p.config)});
    for (const auto& e : p.layout.entries()) {
        Blob b{e.name, std::vector<float>(e.size())};
        for (std::size_t i = 0; i < e.size(); ++i) b.data[i] = static_cast<float>(p.values[e.offset + i]);
        blobs.push_back(std::move(b));
    }

    std::size_t header = 8 + 4 + 4 + 4 + 8 + 4;
    for (const auto& b : blobs) header += 4 + b.name.size() + 8 + 8;

    io::Writer w;
    w.put_bytes({reinterpret_cast<const unsigned char*>(kCheckpointMagic.data()), kCheckpointMagic.size()});
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(p.config.engine));
    w.put(static_cast<std::uint32_t>(p.config.embed_dim));
    w.put(p.alpha);
    w.put(static_cast<std::uint32_t>(blobs.size()));
    std::uint64_t offset = header;
    for (const auto& b : blobs) {
        w.put(static_cast<std::uint32_t>(b.name.size()));
        w.put_string(b.name);
        w.put(offset);
        const std::uint64_t len = b.data.size() * sizeof(float);
        w.put(len);
        offset += len;
    }
    for (const auto& b : blobs)
        for (float f : b.data) w.put(f);
    return std::move(w.bytes());
}

inline ModelParams deserialize_checkpoint(std::span<const unsigned char> bytes) {
    io::Reader r(bytes, "checkpoint");
    const auto magic = r.get_string(8);
    if (std::memcmp(magic.data(), kCheckpointMagic.data(), 8) != 0) throw ParseError("checkpoint: bad magic", 0);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatVersionError("checkpoint: unsupported format version " + std::to_string(version));
    const auto engine = r.get<std::uint32_t>();
    if (engine > static_cast<std::uint32_t>(EngineId::tiny_conv))
        throw ParseError("checkpoint: unknown engine id " + std::to_string(engine), 12);
    const auto dim = r.get<std::uint32_t>();
    const auto alpha = r.get<double>();
    const auto count = r.get<std::uint32_t>();

    struct Entry {
        std::string name;
        std::uint64_t offset, length;
    };
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>();
        Entry e;
        e.name = r.get_string(name_len);
        e.offset = r.get<std::uint64_t>();
        e.length = r.get<std::uint64_t>();
        if (e.offset > bytes.size() || e.length > bytes.size() - e.offset || e.length % sizeof(float) != 0)
            throw ParseError("checkpoint: blob '" + e.name + "' lies outside the file", r.position());
        entries.push_back(std::move(e));
    }
    auto read_blob = [&](const Entry& e) {
        io::Reader br(bytes.subspan(static_cast<std::size_t>(e.offset), static_cast<std::size_t>(e.length)),
                      "checkpoint blob " + e.name);
        std::vector<float> out(e.length / sizeof(float));
        for (auto& f : out) f = br.get<float>();
        return out;
    };
    const auto arch_it = std::find_if(entries.begin(), entries.end(), [](const Entry& e) { return e.name == "arch"; });
    if (arch_it == entries.end()) throw ParseError("checkpoint: missing arch blob", r.position());
    const auto arch = read_blob(*arch_it);
    if (arch.size() != 9) throw ParseError("checkpoint: malformed arch blob", static_cast<std::size_t>(arch_it->offset));

    ModelConfig cfg;
    cfg.engine = static_cast<EngineId>(engine);
    cfg.embed_dim = static_cast<int>(dim);
    cfg.image_height = static_cast<int>(arch[0]);
    cfg.image_width = static_cast<int>(arch[1]);
    cfg.patch_proj_dim = static_cast<int>(arch[2]);
    cfg.conv1_channels = static_cast<int>(arch[3]);
    cfg.conv2_channels = static_cast<int>(arch[4]);
    cfg.image_hidden = static_cast<int>(arch[5]);
    cfg.token_dim = static_cast<int>(arch[6]);
    cfg.text_hidden = static_cast<int>(arch[7]);
    cfg.vocab_size = static_cast<std::uint32_t>(arch[8]);

    ModelParams p(cfg);
    p.alpha = alpha;
    for (const auto& le : p.layout.entries()) {
        const auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == le.name; });
        if (it == entries.end()) throw ParseError("checkpoint: missing tensor " + le.name, r.position());
        const auto data = read_blob(*it);
        if (data.size() != le.size())
            throw ParseError("checkpoint: tensor " + le.name + " has " + std::to_string(data.size()) +
                                 " values, expected " + std::to_string(le.size()),
                             static_cast<std::size_t>(it->offset));
        for (std::size_t i = 0; i < data.size(); ++i) p.values[le.offset + i] = data[i];
    }
    return p;
}

inline std::string checkpoint_id(std::span<const unsigned char> bytes) { return io::hex64(io::fnv1a64(bytes)); }

inline std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
    auto s = ckpt;
    s += ".json";
    return s;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path,
                            const nlohmann::json& sidecar = nlohmann::json::object()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto bytes = serialize_checkpoint(p);
    io::write_file(path, bytes);
    auto meta = sidecar;
    meta["model_id"] = checkpoint_id(bytes);
    meta["engine"] = to_string(p.config.engine);
    meta["embed_dim"] = p.config.embed_dim;
    meta["alpha"] = p.alpha;
    io::write_text(sidecar_path(path), meta.dump(2) + "\n");
}

struct LoadedCheckpoint {
    ModelParams params;
    std::string model_id;
    std::filesystem::path path;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return {deserialize_checkpoint(bytes), checkpoint_id(bytes), path};
}

}  // namespace avlm
