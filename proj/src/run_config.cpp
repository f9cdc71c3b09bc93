#include "stdiff/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "json.hpp"

namespace stdiff {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void get_index(const json& j, const char* key, Eigen::Index& out) {
    if (j.contains(key)) out = j.at(key).get<long long>();
}

json solver_to_json(const SdeSolverConfig& s) {
    return json{{"method", s.method == SdeMethod::euler_heun ? "euler_heun" : "euler_maruyama"},
                {"calculus", s.calculus == SdeCalculus::stratonovich ? "stratonovich" : "ito"},
                {"dt", s.dt}};
}

void solver_from_json(const json& j, SdeSolverConfig& s) {
    reject_unknown(j, {"method", "calculus", "dt"}, "model.solver");
    if (j.contains("method")) {
        const std::string m = j.at("method").get<std::string>();
        if (m == "euler_heun") s.method = SdeMethod::euler_heun;
        else if (m == "euler_maruyama") s.method = SdeMethod::euler_maruyama;
        else throw std::invalid_argument("config: unknown solver method '" + m + "'");
    }
    if (j.contains("calculus")) {
        const std::string c = j.at("calculus").get<std::string>();
        if (c == "stratonovich") s.calculus = SdeCalculus::stratonovich;
        else if (c == "ito") s.calculus = SdeCalculus::ito;
        else throw std::invalid_argument("config: unknown sde calculus '" + c + "'");
    }
    get_if(j, "dt", s.dt);
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    finalize_run_config(cfg);
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["data"] = json{{"height", cfg.data.height},
                     {"width", cfg.data.width},
                     {"channels", cfg.data.channels},
                     {"num_shapes", cfg.data.num_shapes},
                     {"shape_kinds", cfg.data.shape_kinds},
                     {"speed_min", cfg.data.speed_min},
                     {"speed_max", cfg.data.speed_max},
                     {"randomize_bounce", cfg.data.randomize_bounce},
                     {"clip_length", cfg.data.clip_length},
                     {"num_clips", cfg.data.num_clips},
                     {"shape_size", cfg.data.shape_size},
                     {"train_frac", cfg.train_frac},
                     {"keep_every", cfg.keep_every}};
    j["model"] = json{{"frame_channels", cfg.model.frame_channels},
                      {"frame_height", cfg.model.frame_height},
                      {"frame_width", cfg.model.frame_width},
                      {"motion_channels", cfg.model.encoder.motion_channels},
                      {"cnn_widths", cfg.model.encoder.cnn_widths},
                      {"sde_width", cfg.model.sde_net.width},
                      {"unet_widths", cfg.model.unet.widths},
                      {"unet_blocks", cfg.model.unet.blocks_per_res},
                      {"emb_dim", cfg.model.unet.emb_dim},
                      {"spade_hidden", cfg.model.unet.spade_hidden},
                      {"solver", solver_to_json(cfg.model.solver)},
                      {"schedule", json{{"steps", cfg.model.schedule_steps},
                                        {"beta_start", cfg.model.beta_start},
                                        {"beta_end", cfg.model.beta_end}}}};
    j["training"] = json{{"past_frames", cfg.training.past_frames},
                         {"future_pool", cfg.training.future_pool},
                         {"future_samples", cfg.training.future_samples},
                         {"lr", cfg.training.lr},
                         {"epochs", cfg.training.epochs},
                         {"restart_cycle", cfg.training.restart_cycle},
                         {"ema_decay", cfg.training.ema_decay},
                         {"batch_size", cfg.training.batch_size},
                         {"weight_decay", cfg.training.weight_decay},
                         {"grad_clip", cfg.training.grad_clip},
                         {"threads", cfg.training.threads}};
    j["inference"] = json{{"sample_steps", cfg.sample_steps}, {"eval_samples", cfg.eval_samples}};
    // paths are deliberately absent: the canonical form (and its hash)
    // identifies the experiment, not where its artifacts live
    return j;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "data", "model", "training", "inference", "paths"}, "top level");

    RunConfig cfg;
    get_if(j, "seed", cfg.seed);
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d,
                       {"height", "width", "channels", "num_shapes", "shape_kinds", "speed_min",
                        "speed_max", "randomize_bounce", "clip_length", "num_clips", "shape_size",
                        "train_frac", "keep_every"},
                       "data");
        get_index(d, "height", cfg.data.height);
        get_index(d, "width", cfg.data.width);
        get_index(d, "channels", cfg.data.channels);
        get_index(d, "num_shapes", cfg.data.num_shapes);
        get_if(d, "shape_kinds", cfg.data.shape_kinds);
        get_if(d, "speed_min", cfg.data.speed_min);
        get_if(d, "speed_max", cfg.data.speed_max);
        get_if(d, "randomize_bounce", cfg.data.randomize_bounce);
        get_index(d, "clip_length", cfg.data.clip_length);
        get_index(d, "num_clips", cfg.data.num_clips);
        get_if(d, "shape_size", cfg.data.shape_size);
        get_if(d, "train_frac", cfg.train_frac);
        get_index(d, "keep_every", cfg.keep_every);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m,
                       {"frame_channels", "frame_height", "frame_width", "motion_channels",
                        "cnn_widths", "sde_width", "unet_widths", "unet_blocks", "emb_dim",
                        "spade_hidden", "solver", "schedule"},
                       "model");
        get_index(m, "frame_channels", cfg.model.frame_channels);
        get_index(m, "frame_height", cfg.model.frame_height);
        get_index(m, "frame_width", cfg.model.frame_width);
        get_index(m, "motion_channels", cfg.model.encoder.motion_channels);
        if (m.contains("cnn_widths")) {
            auto v = m.at("cnn_widths").get<std::vector<long long>>();
            if (v.size() != 3)
                throw std::invalid_argument("config: cnn_widths must have 3 entries");
            for (int i = 0; i < 3; ++i)
                cfg.model.encoder.cnn_widths[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
        }
        get_index(m, "sde_width", cfg.model.sde_net.width);
        if (m.contains("unet_widths")) {
            auto v = m.at("unet_widths").get<std::vector<long long>>();
            if (v.size() != 3)
                throw std::invalid_argument("config: unet_widths must have 3 entries");
            for (int i = 0; i < 3; ++i)
                cfg.model.unet.widths[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
        }
        get_index(m, "unet_blocks", cfg.model.unet.blocks_per_res);
        get_index(m, "emb_dim", cfg.model.unet.emb_dim);
        get_index(m, "spade_hidden", cfg.model.unet.spade_hidden);
        if (m.contains("solver")) solver_from_json(m.at("solver"), cfg.model.solver);
        if (m.contains("schedule")) {
            const json& s = m.at("schedule");
            reject_unknown(s, {"steps", "beta_start", "beta_end"}, "model.schedule");
            get_index(s, "steps", cfg.model.schedule_steps);
            get_if(s, "beta_start", cfg.model.beta_start);
            get_if(s, "beta_end", cfg.model.beta_end);
        }
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        reject_unknown(t,
                       {"past_frames", "future_pool", "future_samples", "lr", "epochs",
                        "restart_cycle", "ema_decay", "batch_size", "weight_decay", "grad_clip",
                        "threads"},
                       "training");
        get_index(t, "past_frames", cfg.training.past_frames);
        get_index(t, "future_pool", cfg.training.future_pool);
        get_index(t, "future_samples", cfg.training.future_samples);
        get_if(t, "lr", cfg.training.lr);
        get_index(t, "epochs", cfg.training.epochs);
        get_index(t, "restart_cycle", cfg.training.restart_cycle);
        get_if(t, "ema_decay", cfg.training.ema_decay);
        get_index(t, "batch_size", cfg.training.batch_size);
        get_if(t, "weight_decay", cfg.training.weight_decay);
        get_if(t, "grad_clip", cfg.training.grad_clip);
        get_if(t, "threads", cfg.training.threads);
    }
    if (j.contains("inference")) {
        const json& i = j.at("inference");
        reject_unknown(i, {"sample_steps", "eval_samples"}, "inference");
        get_index(i, "sample_steps", cfg.sample_steps);
        get_index(i, "eval_samples", cfg.eval_samples);
    }
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown(p, {"data_dir", "out_dir"}, "paths");
        get_if(p, "data_dir", cfg.data_dir);
        get_if(p, "out_dir", cfg.out_dir);
    }
    finalize_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

void finalize_run_config(RunConfig& cfg) {
    if (cfg.data_dir.empty()) {
        if (const char* env = std::getenv("STDIFF_DATA_DIR")) cfg.data_dir = env;
        else cfg.data_dir = "data";
    }
    cfg.data.seed = cfg.seed;
    cfg.training.seed = cfg.seed;
    cfg.model.frame_channels = cfg.data.channels;
    cfg.model.frame_height = cfg.data.height;
    cfg.model.frame_width = cfg.data.width;
    cfg.model.finalize();
    cfg.training.validate();
    cfg.data.validate();
    if (cfg.sample_steps < 1 || cfg.sample_steps > cfg.model.schedule_steps)
        throw std::invalid_argument("config: sample_steps must lie in [1, schedule steps]");
    if (cfg.eval_samples < 1) throw std::invalid_argument("config: eval_samples must be >= 1");
    if (cfg.train_frac < 0 || cfg.train_frac > 1)
        throw std::invalid_argument("config: train_frac must be in [0, 1]");
    if (cfg.keep_every < 1) throw std::invalid_argument("config: keep_every must be >= 1");
}

std::string canonical_config_json(const RunConfig& cfg) {
    return run_config_to_json(cfg).dump();
}

std::string config_hash(const RunConfig& cfg) {
    const std::string s = canonical_config_json(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace stdiff
