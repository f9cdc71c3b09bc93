#ifndef STDIFF_CHECKPOINT_HPP
#define STDIFF_CHECKPOINT_HPP

#include "stdiff/errors.hpp"
#include "stdiff/model.hpp"
#include "stdiff/run_config.hpp"
#include "stdiff/training.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace stdiff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian via memcpy");

inline constexpr std::uint32_t kCheckpointSchema = 1;

nlohmann::json run_config_to_json(const RunConfig& cfg);  // defined in run_config.cpp

namespace ckpt_detail {

template <typename S>
void write_blob(std::ofstream& os, const Eigen::Array<S, Eigen::Dynamic, 1>& v) {
    const std::uint64_t n = static_cast<std::uint64_t>(v.size());
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(S)));
}

template <typename S>
Eigen::Array<S, Eigen::Dynamic, 1> read_blob(std::ifstream& is, const std::string& path) {
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    Eigen::Array<S, Eigen::Dynamic, 1> v(static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (!is) throw IntegrityError("checkpoint: truncated blob in " + path);
    return v;
}

template <typename S>
const char* dtype_name() {
    if constexpr (sizeof(S) == 4) return "f32";
    else return "f64";
}

}  // namespace ckpt_detail

// Layout: magic "STDC", u32 schema, u64 meta length, canonical JSON metadata
// (config snapshot, name-indexed parameter manifest, counters), then raw
// little-endian blobs: live params, EMA shadow, Adam first/second moments.
template <typename S>
void save_checkpoint(const std::filesystem::path& path, const STDiffModel<S>& model,
                     const AdamW<S>& opt, const RunConfig& cfg, Eigen::Index epochs_done,
                     Eigen::Index global_step) {
    nlohmann::json meta;
    meta["dtype"] = ckpt_detail::dtype_name<S>();
    meta["config"] = run_config_to_json(cfg);
    meta["config_hash"] = config_hash(cfg);
    meta["epochs_done"] = epochs_done;
    meta["global_step"] = global_step;
    meta["adam_t"] = opt.t;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& e : model.params.entries())
        manifest.push_back({e.name, e.offset, e.shape.numel()});
    meta["params"] = manifest;
    const std::string meta_str = meta.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    os.write("STDC", 4);
    const std::uint32_t schema = kCheckpointSchema;
    os.write(reinterpret_cast<const char*>(&schema), 4);
    const std::uint64_t len = meta_str.size();
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    ckpt_detail::write_blob(os, model.params.values());
    ckpt_detail::write_blob(os, model.ema);
    ckpt_detail::write_blob(os, opt.m);
    ckpt_detail::write_blob(os, opt.v);
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

template <typename S>
struct LoadedCheckpoint {
    RunConfig config;
    STDiffModel<S> model;
    AdamW<S> opt{0};
    Eigen::Index epochs_done = 0;
    Eigen::Index global_step = 0;
    std::string hash;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "STDC", 4) != 0)
        throw IntegrityError("checkpoint: bad magic in " + path.string());
    std::uint32_t schema = 0;
    is.read(reinterpret_cast<char*>(&schema), 4);
    if (schema != kCheckpointSchema)
        throw IntegrityError("checkpoint: schema version " + std::to_string(schema) +
                             " unsupported (expected " + std::to_string(kCheckpointSchema) +
                             ") in " + path.string());
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 8);
    std::string meta_str(len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(len));
    if (!is) throw IntegrityError("checkpoint: truncated metadata in " + path.string());

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception&) {
        throw IntegrityError("checkpoint: corrupt metadata in " + path.string());
    }
    if (meta.at("dtype").get<std::string>() != ckpt_detail::dtype_name<S>())
        throw IntegrityError("checkpoint: dtype " + meta.at("dtype").get<std::string>() +
                             " does not match this build in " + path.string());

    LoadedCheckpoint<S> out;
    out.config = parse_run_config(meta.at("config").dump());
    out.model = STDiffModel<S>::create(out.config.model, out.config.seed);
    out.epochs_done = meta.at("epochs_done").get<long long>();
    out.global_step = meta.at("global_step").get<long long>();
    out.hash = meta.at("config_hash").get<std::string>();

    const auto& manifest = meta.at("params");
    const auto& entries = out.model.params.entries();
    if (manifest.size() != entries.size())
        throw IntegrityError("checkpoint: parameter manifest size mismatch in " + path.string());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& row = manifest[i];
        if (row[0].get<std::string>() != entries[i].name ||
            row[1].get<long long>() != entries[i].offset ||
            row[2].get<long long>() != entries[i].shape.numel())
            throw IntegrityError("checkpoint: manifest entry '" + entries[i].name +
                                 "' does not match the reconstructed model in " + path.string());
    }

    auto live = ckpt_detail::read_blob<S>(is, path.string());
    auto ema = ckpt_detail::read_blob<S>(is, path.string());
    out.opt = AdamW<S>(out.model.params.size(), out.config.training.weight_decay);
    out.opt.t = meta.at("adam_t").get<long>();
    auto am = ckpt_detail::read_blob<S>(is, path.string());
    auto av = ckpt_detail::read_blob<S>(is, path.string());
    if (live.size() != out.model.params.size() || ema.size() != live.size() ||
        am.size() != live.size() || av.size() != live.size())
        throw IntegrityError("checkpoint: blob sizes do not match the manifest in " +
                             path.string());
    out.model.params.values() = std::move(live);
    out.model.ema = std::move(ema);
    out.opt.m = std::move(am);
    out.opt.v = std::move(av);
    return out;
}

}  // namespace stdiff

#endif
