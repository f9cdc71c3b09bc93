// stdiff command-line tool: data generation, training, prediction and
// evaluation for the spatio-temporal diffusion video predictor.

#include "stdiff/checkpoint.hpp"
#include "stdiff/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace stdiff;

namespace {

using Scalar = float;

constexpr std::uint64_t kRhoSeed = 1729;  // fixed seed of the stand-in perceptual net

std::vector<double> parse_times(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    if (out.empty()) throw std::invalid_argument("--times: no values given");
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] <= 0) throw std::invalid_argument("--times: offsets must be positive");
        if (i > 0 && out[i] <= out[i - 1])
            throw std::invalid_argument("--times: offsets must be strictly increasing");
    }
    return out;
}

int cmd_generate_data(const std::string& config_path, const std::string& out_override,
                      std::int64_t seed_override) {
    RunConfig cfg = load_run_config(config_path);
    if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
        finalize_run_config(cfg);
    }
    const fs::path dir = out_override.empty() ? fs::path(cfg.data_dir) : fs::path(out_override);

    const RandomSource rs(cfg.seed);
    auto full = generate_stochastic_shapes<Scalar>(cfg.data, rs);
    auto [train, test] = split(full, cfg.train_frac, rs);
    write_dataset(dir, train, test, cfg);

    // small preview grid for eyeballing
    std::vector<ClipData> rows;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, train.clips.size()); ++i) {
        std::vector<Tensor<Scalar>> io;
        for (const auto& f : train.clips[i].frames) io.push_back(denormalize(f));
        rows.push_back(clip_from_frames(io));
    }
    if (!rows.empty()) write_png_frame_grid(dir / "preview.png", rows);

    std::cout << "generated " << train.clips.size() << " train / " << test.clips.size()
              << " test clips under " << dir.string() << " (config " << config_hash(cfg) << ")\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_override, std::int64_t seed_override,
              std::int64_t epochs_override, int threads_override, bool keep_all) {
    RunConfig cfg = load_run_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (epochs_override > 0) cfg.training.epochs = epochs_override;
    if (threads_override > 0) cfg.training.threads = threads_override;
    if (!data_override.empty()) cfg.data_dir = data_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    finalize_run_config(cfg);

    auto data = load_dataset<Scalar>(cfg.data_dir);
    VideoDataset<Scalar> train_ds = downsample_framerate(data.train, cfg.keep_every);

    auto model = STDiffModel<Scalar>::create(cfg.model, cfg.seed);
    AdamW<Scalar> opt(model.params.size(), cfg.training.weight_decay);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    {
        std::ofstream cs(out / "config.json");
        cs << canonical_config_json(cfg) << "\n";
    }
    std::ofstream csv(out / "loss.csv");
    csv << "epoch,step,loss,lr\n";
    csv.precision(17);

    std::vector<fs::path> kept;
    auto checkpoint_fn = [&](Eigen::Index epoch, Eigen::Index global_step) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "ckpt_epoch_%04lld.stdc",
                      static_cast<long long>(epoch + 1));
        const fs::path p = out / buf;
        save_checkpoint(p, model, opt, cfg, epoch + 1, global_step);
        kept.push_back(p);
        if (!keep_all && kept.size() > 2) {
            fs::remove(kept.front());
            kept.erase(kept.begin());
        }
    };
    auto on_step = [&](const LossRecord& r) {
        csv << r.epoch << "," << r.step << "," << r.loss << "," << r.lr << "\n";
        if (r.step % 50 == 0)
            std::cout << "epoch " << r.epoch << " step " << r.step << " loss " << r.loss
                      << " lr " << r.lr << std::endl;
    };

    train(model, opt, train_ds, cfg.training, 0, checkpoint_fn, on_step);
    save_checkpoint(out / "ckpt_final.stdc", model, opt, cfg, cfg.training.epochs,
                    static_cast<Eigen::Index>(
                        cfg.training.epochs *
                        ((static_cast<Eigen::Index>(train_ds.clips.size()) + cfg.training.batch_size - 1) /
                         cfg.training.batch_size)));
    std::cout << "trained " << cfg.training.epochs << " epochs on " << train_ds.clips.size()
              << " clips; final checkpoint " << (out / "ckpt_final.stdc").string() << "\n";
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& past_path,
                const std::string& times_csv, Eigen::Index samples, Eigen::Index steps,
                const std::string& mode_str, std::uint64_t seed, const std::string& out_dir) {
    auto ckpt = load_checkpoint<Scalar>(ckpt_path);
    const std::vector<double> offsets = parse_times(times_csv);
    if (steps <= 0) steps = ckpt.config.sample_steps;
    if (samples < 1) throw std::invalid_argument("--samples must be >= 1");
    PredictMode mode;
    if (mode_str == "sde") mode = PredictMode::sde;
    else if (mode_str == "ode") mode = PredictMode::ode;
    else throw std::invalid_argument("--mode must be 'sde' or 'ode'");

    FrameSequence<Scalar> past = read_clip_stdf<Scalar>(past_path);
    const double t0 = past.times.back();
    std::vector<double> abs_times;
    for (double o : offsets) abs_times.push_back(t0 + o);

    const fs::path out(out_dir);
    fs::create_directories(out);
    const RandomSource rs(seed);

    std::vector<ClipData> rows;
    for (Eigen::Index s = 0; s < samples; ++s) {
        FrameSequence<Scalar> pred = predict(ckpt.model, past, abs_times, steps, rs, mode,
                                             static_cast<std::uint64_t>(s));
        char buf[64];
        std::snprintf(buf, sizeof(buf), "pred_sample_%02lld.stdf", static_cast<long long>(s));
        write_clip_stdf(out / buf, pred);
        std::vector<Tensor<Scalar>> io;
        for (const auto& f : pred.frames) io.push_back(denormalize(f));
        rows.push_back(clip_from_frames(io));
    }
    write_png_frame_grid(out / "grid.png", rows);

    nlohmann::json meta;
    meta["config_hash"] = ckpt.hash;
    meta["seed"] = seed;
    meta["mode"] = mode_str;
    meta["steps"] = steps;
    meta["samples"] = samples;
    meta["offsets"] = offsets;
    meta["times"] = abs_times;
    meta["past_frames"] = past.size();
    std::ofstream ms(out / "prediction.json");
    ms << meta.dump(2) << "\n";

    std::cout << "wrote " << samples << " prediction clip(s) x " << abs_times.size()
              << " frames to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_override,
             Eigen::Index samples, Eigen::Index steps, const std::string& metrics_csv,
             std::uint64_t seed, const std::string& out_file, Eigen::Index max_examples,
             int threads, const std::string& mode_str) {
    auto ckpt = load_checkpoint<Scalar>(ckpt_path);
    RunConfig& cfg = ckpt.config;
    if (!data_override.empty()) cfg.data_dir = data_override;
    if (steps <= 0) steps = cfg.sample_steps;
    if (samples <= 0) samples = cfg.eval_samples;
    PredictMode mode = mode_str == "ode" ? PredictMode::ode : PredictMode::sde;

    std::set<std::string> wanted;
    {
        std::stringstream ss(metrics_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            if (tok != "ilpips" && tok != "psnr" && tok != "ssim" && tok != "best_of")
                throw std::invalid_argument("unknown metric '" + tok + "'");
            wanted.insert(tok);
        }
    }
    if (wanted.empty()) throw std::invalid_argument("--metrics selected nothing");

    auto data = load_dataset<Scalar>(cfg.data_dir);
    VideoDataset<Scalar> test_ds = downsample_framerate(data.test, cfg.keep_every);
    const Eigen::Index N = cfg.training.past_frames, M = cfg.training.future_pool;
    Eigen::Index n_examples = static_cast<Eigen::Index>(test_ds.clips.size());
    if (max_examples > 0) n_examples = std::min(n_examples, max_examples);
    if (n_examples == 0) throw std::invalid_argument("eval: empty test split");

    std::vector<FrameSequence<Scalar>> pasts;
    std::vector<std::vector<Tensor<Scalar>>> gt;
    for (Eigen::Index i = 0; i < n_examples; ++i) {
        auto [past, future] = split_clip(test_ds.clips[static_cast<std::size_t>(i)], N, M);
        pasts.push_back(std::move(past));
        std::vector<Tensor<Scalar>> clip_gt;
        for (const auto& f : future.frames) clip_gt.push_back(denormalize(f));
        gt.push_back(std::move(clip_gt));
    }
    std::vector<double> times;
    for (Eigen::Index k = 1; k <= M; ++k) times.push_back(static_cast<double>(N + k));

    const RandomSource rs(seed);
    auto preds = generate_predictions(ckpt.model, pasts, times, steps, samples, mode, rs, threads);

    nlohmann::json report;
    report["config_hash"] = ckpt.hash;
    report["seed"] = seed;
    report["mode"] = mode_str;
    report["samples"] = samples;
    report["steps"] = steps;
    report["examples"] = n_examples;

    auto emit = [&](const std::string& name, const std::vector<double>& per_example) {
        double mean = 0;
        nlohmann::json arr = nlohmann::json::array();
        for (double v : per_example) {
            const double capped = std::min(v, 99.0);  // PSNR +inf sentinel capped for JSON
            arr.push_back(capped);
            mean += capped;
        }
        mean /= static_cast<double>(per_example.empty() ? 1 : per_example.size());
        report[name] = {{"mean", mean}, {"per_example", arr}};
    };

    PerceptualDistance<Scalar> rho = [](const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
        return random_feature_distance(a, b, kRhoSeed);
    };
    if (wanted.count("ilpips")) emit("ilpips", ilpips_per_example(preds, rho));
    const bool best = wanted.count("best_of") > 0;
    if (wanted.count("psnr")) {
        auto metric = [](const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return psnr(a, b); };
        if (best) {
            emit("best_of_psnr", best_of_s<Scalar>(preds, gt, metric, BestDirection::max).per_example);
        }
        auto mean_set = PredictionSet<Scalar>::create(preds.n_examples, 1, preds.n_frames,
                                                      preds.frame_shape);
        std::vector<double> means;
        for (Eigen::Index n = 0; n < preds.n_examples; ++n) {
            double acc = 0;
            for (Eigen::Index s = 0; s < preds.n_samples; ++s)
                for (Eigen::Index t = 0; t < preds.n_frames; ++t)
                    acc += std::min(psnr(preds.at(n, s, t),
                                         gt[static_cast<std::size_t>(n)][static_cast<std::size_t>(t)]),
                                    99.0);
            means.push_back(acc / static_cast<double>(preds.n_samples * preds.n_frames));
        }
        emit("psnr", means);
        (void)mean_set;
    }
    if (wanted.count("ssim")) {
        auto metric = [](const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return ssim(a, b); };
        if (best)
            emit("best_of_ssim", best_of_s<Scalar>(preds, gt, metric, BestDirection::max).per_example);
        std::vector<double> means;
        for (Eigen::Index n = 0; n < preds.n_examples; ++n) {
            double acc = 0;
            for (Eigen::Index s = 0; s < preds.n_samples; ++s)
                for (Eigen::Index t = 0; t < preds.n_frames; ++t)
                    acc += ssim(preds.at(n, s, t),
                                gt[static_cast<std::size_t>(n)][static_cast<std::size_t>(t)]);
            means.push_back(acc / static_cast<double>(preds.n_samples * preds.n_frames));
        }
        emit("ssim", means);
    }

    std::ofstream os(out_file);
    if (!os) throw std::runtime_error("eval: cannot write " + out_file);
    os << report.dump(2) << "\n";
    std::cout << "evaluated " << n_examples << " examples x " << samples << " samples; report at "
              << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stdiff: stochastic spatio-temporal diffusion video prediction"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, ckpt_path, past_path, times_csv;
    std::string pred_out = "prediction";
    std::string mode = "sde", metrics = "ilpips,psnr,ssim,best_of", out_file = "metrics.json";
    std::int64_t seed_override = -1, epochs_override = -1;
    std::uint64_t seed = 0;
    Eigen::Index samples = 0, steps = 0, max_examples = 0;
    int threads = 0;
    bool keep_all = false;

    auto* gen = app.add_subcommand("generate-data", "synthesize the stochastic-shapes dataset");
    gen->add_option("--config", config_path, "run config JSON")->required();
    gen->add_option("--out", out_dir, "output dataset directory (default: paths.data_dir)");
    gen->add_option("--seed", seed_override, "override config seed");

    auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
    tr->add_option("--config", config_path, "run config JSON")->required();
    tr->add_option("--data", data_dir, "dataset directory (default: paths.data_dir)");
    tr->add_option("--out", out_dir, "run output directory (default: paths.out_dir)");
    tr->add_option("--seed", seed_override, "override config seed");
    tr->add_option("--epochs", epochs_override, "override training epochs");
    tr->add_option("--threads", threads, "worker threads (0 = hardware)");
    tr->add_flag("--keep-all-checkpoints", keep_all, "retain every per-epoch checkpoint");

    auto* pr = app.add_subcommand("predict", "sample future frames for one past clip");
    pr->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    pr->add_option("--past", past_path, "past clip (STDF)")->required();
    pr->add_option("--times", times_csv, "future offsets after the last observed frame, e.g. 0.5,1,2.5")
        ->required();
    pr->add_option("--samples", samples, "number of stochastic predictions (default 1)");
    pr->add_option("--steps", steps, "reverse diffusion steps (default: config)");
    pr->add_option("--mode", mode, "motion integration: sde | ode")->capture_default_str();
    pr->add_option("--seed", seed, "sampling seed")->capture_default_str();
    pr->add_option("--out", pred_out, "output directory")->capture_default_str();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    ev->add_option("--data", data_dir, "dataset directory (default: from checkpoint config)");
    ev->add_option("--samples", samples, "stochastic predictions per example (default: config)");
    ev->add_option("--steps", steps, "reverse diffusion steps (default: config)");
    ev->add_option("--metrics", metrics, "comma list: ilpips,psnr,ssim,best_of")
        ->capture_default_str();
    ev->add_option("--seed", seed, "evaluation seed")->capture_default_str();
    ev->add_option("--out", out_file, "metrics report path")->capture_default_str();
    ev->add_option("--max-examples", max_examples, "cap on evaluated test examples (0 = all)");
    ev->add_option("--threads", threads, "worker threads (0 = hardware)");
    ev->add_option("--mode", mode, "motion integration: sde | ode")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate_data(config_path, out_dir, seed_override);
        if (tr->parsed())
            return cmd_train(config_path, data_dir, out_dir, seed_override, epochs_override,
                             threads, keep_all);
        if (pr->parsed()) {
            if (samples < 1) samples = 1;
            return cmd_predict(ckpt_path, past_path, times_csv, samples, steps, mode, seed,
                               pred_out);
        }
        if (ev->parsed())
            return cmd_eval(ckpt_path, data_dir, samples, steps, metrics, seed, out_file,
                            max_examples, threads, mode);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
