#ifndef STDIFF_PIPELINE_HPP
#define STDIFF_PIPELINE_HPP

#include "stdiff/clip_io.hpp"
#include "stdiff/metrics.hpp"
#include "stdiff/parallel.hpp"
#include "stdiff/predict.hpp"
#include "stdiff/run_config.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

// Disk layout and batch-inference helpers shared by the CLI and the
// acceptance suite.
namespace stdiff {

template <typename S>
void write_clip_stdf(const std::filesystem::path& path, const FrameSequence<S>& clip) {
    std::vector<Tensor<S>> io;
    io.reserve(clip.size());
    for (const auto& f : clip.frames) io.push_back(denormalize(f));
    write_stdf(path, clip_from_frames(io));
}

template <typename S>
FrameSequence<S> read_clip_stdf(const std::filesystem::path& path, double t0 = 1.0) {
    const ClipData c = read_stdf(path);
    auto io = frames_from_clip<S>(c);
    std::vector<Frame<S>> frames;
    std::vector<double> times;
    for (std::size_t t = 0; t < io.size(); ++t) {
        frames.push_back(normalize(io[t]));
        times.push_back(t0 + static_cast<double>(t));
    }
    return FrameSequence<S>(std::move(frames), std::move(times));
}

// Dataset directory: clips/ with one STDF file per clip, manifest.json with
// the split lists, geometry, downsample map and config stamp.
template <typename S>
void write_dataset(const std::filesystem::path& dir, const VideoDataset<S>& train,
                   const VideoDataset<S>& test, const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "clips");
    nlohmann::json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["seed"] = cfg.seed;
    manifest["keep_every"] = cfg.keep_every;
    const auto& probe = !train.clips.empty() ? train.clips.front() : test.clips.front();
    manifest["shape"] = {{"T", probe.size()},
                         {"C", probe.frames[0].channels()},
                         {"H", probe.frames[0].height()},
                         {"W", probe.frames[0].width()}};
    auto dump_split = [&](const VideoDataset<S>& ds, const std::string& name, std::size_t base) {
        nlohmann::json files = nlohmann::json::array();
        for (std::size_t i = 0; i < ds.clips.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "clips/clip_%05zu.stdf", base + i);
            write_clip_stdf(dir / buf, ds.clips[i]);
            files.push_back(buf);
        }
        manifest[name] = files;
    };
    dump_split(train, "train", 0);
    dump_split(test, "test", train.clips.size());
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("write_dataset: failed writing manifest under " +
                                      dir.string());
}

template <typename S>
struct LoadedDataset {
    VideoDataset<S> train;
    VideoDataset<S> test;
    Eigen::Index keep_every = 1;
    std::string config_hash;
};

template <typename S>
LoadedDataset<S> load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("load_dataset: missing manifest.json under " + dir.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("load_dataset: corrupt manifest.json: " + std::string(e.what()));
    }
    LoadedDataset<S> out;
    out.keep_every = manifest.value("keep_every", 1);
    out.config_hash = manifest.value("config_hash", "");
    auto read_split = [&](const char* name, VideoDataset<S>& ds) {
        ds.split_name = name;
        for (const auto& rel : manifest.at(name))
            ds.clips.push_back(read_clip_stdf<S>(dir / rel.get<std::string>()));
    };
    read_split("train", out.train);
    read_split("test", out.test);
    return out;
}

// Stochastic predictions for a set of test pasts: samples x times per
// example, parallel over (example, sample) with deterministic substreams.
// The returned set holds I/O-space frames, ready for metrics.
template <typename S>
PredictionSet<S> generate_predictions(const STDiffModel<S>& model,
                                      const std::vector<FrameSequence<S>>& pasts,
                                      const std::vector<double>& future_times,
                                      Eigen::Index steps, Eigen::Index samples, PredictMode mode,
                                      const RandomSource& rs, int threads) {
    const auto n = static_cast<Eigen::Index>(pasts.size());
    auto preds = PredictionSet<S>::create(n, samples, static_cast<Eigen::Index>(future_times.size()),
                                          model.cfg.frame_shape());
    const int jobs = static_cast<int>(n * samples);
    parallel_for(jobs, resolve_threads(threads), [&](int j) {
        const Eigen::Index ex = j / samples;
        const Eigen::Index sm = j % samples;
        RandomSource per_example(rs.stream("eval", static_cast<std::uint64_t>(ex)).next_u64());
        FrameSequence<S> out = predict(model, pasts[static_cast<std::size_t>(ex)], future_times,
                                       steps, per_example, mode, static_cast<std::uint64_t>(sm));
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(future_times.size()); ++t)
            preds.at(ex, sm, t) = denormalize(out.frames[static_cast<std::size_t>(t)]);
    });
    return preds;
}

// Per-example iLPIPS decomposition (the mean over examples equals the full
// formula since U = N*S*T).
template <typename S>
std::vector<double> ilpips_per_example(const PredictionSet<S>& preds,
                                       const PerceptualDistance<S>& rho) {
    std::vector<double> out;
    for (Eigen::Index n = 0; n < preds.n_examples; ++n) {
        PredictionSet<S> one = PredictionSet<S>::create(1, preds.n_samples, preds.n_frames,
                                                        preds.frame_shape);
        for (Eigen::Index s = 0; s < preds.n_samples; ++s)
            for (Eigen::Index t = 0; t < preds.n_frames; ++t) one.at(0, s, t) = preds.at(n, s, t);
        out.push_back(ilpips(one, rho));
    }
    return out;
}

}  // namespace stdiff

#endif
