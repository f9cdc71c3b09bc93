#ifndef STDIFF_RUN_CONFIG_HPP
#define STDIFF_RUN_CONFIG_HPP

#include "stdiff/datasets.hpp"
#include "stdiff/model.hpp"
#include "stdiff/training.hpp"

#include <filesystem>
#include <string>

namespace stdiff {

// One run's full configuration: data synthesis, model, training, inference
// and paths. JSON round-trips canonically (sorted keys); unknown keys are
// rejected. The canonical hash is stamped into checkpoints and reports.
struct RunConfig {
    std::uint64_t seed = 0;
    SyntheticConfig data;
    double train_frac = 0.886;  // 2000 / 2256 with the default pool
    Eigen::Index keep_every = 1;
    ModelConfig model;
    TrainingConfig training;
    Eigen::Index sample_steps = 100;
    Eigen::Index eval_samples = 10;
    std::string data_dir;  // defaults to $STDIFF_DATA_DIR
    std::string out_dir = "runs";
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string canonical_config_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Applies environment defaults (STDIFF_DATA_DIR) and cross-field checks.
void finalize_run_config(RunConfig& cfg);

}  // namespace stdiff

#endif
