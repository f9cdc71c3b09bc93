#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stdiff/checkpoint.hpp"
#include "stdiff/predict.hpp"
#include "stdiff/training.hpp"

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace stdiff;

namespace {

RunConfig tiny_run_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.data.height = 16;
    cfg.data.width = 16;
    cfg.data.num_shapes = 1;
    cfg.data.shape_size = 5.0;
    cfg.data.clip_length = 7;
    cfg.data.num_clips = 8;
    cfg.model.encoder.motion_channels = 4;
    cfg.model.encoder.cnn_widths = {4, 4, 4};
    cfg.model.sde_net.width = 6;
    cfg.model.unet.widths = {8, 8, 8};
    cfg.model.unet.blocks_per_res = 1;
    cfg.model.unet.emb_dim = 16;
    cfg.model.unet.spade_hidden = 8;
    cfg.model.schedule_steps = 20;
    cfg.model.beta_start = 1e-3;
    cfg.model.beta_end = 0.1;
    cfg.training.past_frames = 3;
    cfg.training.future_pool = 4;
    cfg.training.future_samples = 2;
    cfg.training.epochs = 2;
    cfg.training.batch_size = 4;
    cfg.training.threads = 2;
    cfg.sample_steps = 10;
    finalize_run_config(cfg);
    return cfg;
}

VideoDataset<double> tiny_dataset(const RunConfig& cfg) {
    return generate_stochastic_shapes<double>(cfg.data, RandomSource(cfg.seed));
}

}  // namespace

TEST_CASE("future timestep sampling: edge cases and marginals") {
    Rng rng = RandomSource(1).stream("timesteps");
    CHECK(sample_future_timesteps(6, 6, rng) == std::vector<Eigen::Index>{1, 2, 3, 4, 5, 6});
    CHECK(sample_future_timesteps(1, 1, rng) == std::vector<Eigen::Index>{1});
    CHECK_THROWS_AS(sample_future_timesteps(4, 5, rng), std::invalid_argument);

    // each k in {1..10} should appear with frequency P/M = 0.6 +- 0.01
    const int draws = 100000;
    std::array<int, 10> counts{};
    for (int d = 0; d < draws; ++d) {
        auto ks = sample_future_timesteps(10, 6, rng);
        CHECK(ks.size() == 6);
        for (std::size_t i = 1; i < ks.size(); ++i) CHECK(ks[i] > ks[i - 1]);
        for (auto k : ks) counts[static_cast<std::size_t>(k - 1)]++;
    }
    for (int k = 0; k < 10; ++k) {
        const double freq = static_cast<double>(counts[static_cast<std::size_t>(k)]) / draws;
        CHECK(std::abs(freq - 0.6) < 0.01);
    }
}

TEST_CASE("cosine warm-restart schedule closed form") {
    CHECK(cosine_restart_lr(1e-4, 0.0, 200.0) == doctest::Approx(1e-4));
    CHECK(cosine_restart_lr(1e-4, 100.0, 200.0) == doctest::Approx(5e-5));
    CHECK(cosine_restart_lr(1e-4, 50.0, 200.0) ==
          doctest::Approx(0.5e-4 * (1.0 + std::cos(3.14159265358979323846 / 4.0))));
    CHECK(cosine_restart_lr(1e-4, 200.0, 200.0) == doctest::Approx(1e-4));  // restart
    CHECK(cosine_restart_lr(1e-4, 199.999, 200.0) < 1e-9);
}

TEST_CASE("ema update recurrences") {
    auto cfg = tiny_run_config(2);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    const auto init = model.ema;

    // decay 0: shadow = live
    model.params.values() += 0.5;
    ema_update(model, 0.0);
    CHECK((model.ema == model.params.values()).all());

    // two updates with constant live v from shadow s0: d^2 s0 + (1 - d^2) v
    auto s0 = model.ema;
    model.params.values() += 1.0;
    const auto v = model.params.values();
    const double d = 0.9;
    ema_update(model, d);
    ema_update(model, d);
    const auto expect = (d * d * s0 + (1 - d * d) * v).eval();
    CHECK((model.ema - expect).abs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(ema_update(model, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ema_update(model, -0.1), std::invalid_argument);
    (void)init;
}

TEST_CASE("exact-noise oracle yields zero loss; trace counts match P") {
    auto cfg = tiny_run_config(3);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);
    auto [past, future] = split_clip(data.clips[0], cfg.training.past_frames,
                                     cfg.training.future_pool);

    NoiseOracle<double> oracle = [](const Tensor<double>&, const Tensor<double>&,
                                    const Tensor<double>&, Eigen::Index,
                                    const Tensor<double>& true_eps) { return true_eps; };

    ad::Tape<double> tape;
    BoundParams<double> p(tape, model.live());
    RandomSource rs(7);
    Rng rts = rs.stream("ts"), reps = rs.stream("eps"), rw = rs.stream("w");
    TrainingTrace trace;
    auto loss = training_loss(p, model, past, future, cfg.training, rts, reps, rw, &oracle, &trace);
    CHECK(loss.value().data[0] == 0.0);
    CHECK(trace.sde_integrations == 2);  // P = 2
    CHECK(trace.noise_evals == 2);

    // P = 1: exactly one integration and one noise evaluation
    auto tc1 = cfg.training;
    tc1.future_samples = 1;
    ad::Tape<double> tape1;
    BoundParams<double> p1(tape1, model.live());
    Rng rts1 = rs.stream("ts1"), reps1 = rs.stream("eps1"), rw1 = rs.stream("w1");
    TrainingTrace trace1;
    training_loss(p1, model, past, future, tc1, rts1, reps1, rw1, &oracle, &trace1);
    CHECK(trace1.sde_integrations == 1);
    CHECK(trace1.noise_evals == 1);
}

TEST_CASE("motion integration covers (N, t_P] with disjoint consecutive intervals") {
    auto cfg = tiny_run_config(4);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);
    auto [past, future] = split_clip(data.clips[1], 3, 4);

    ad::Tape<double> tape;
    BoundParams<double> p(tape, model.live());
    RandomSource rs(11);
    Rng rts = rs.stream("ts"), reps = rs.stream("eps"), rw = rs.stream("w");
    TrainingTrace trace;
    training_loss(p, model, past, future, cfg.training, rts, reps, rw,
                  static_cast<const NoiseOracle<double>*>(nullptr), &trace);
    REQUIRE(trace.intervals.size() == 2);
    CHECK(trace.intervals[0].first == doctest::Approx(3.0));  // t0 = N
    for (std::size_t i = 1; i < trace.intervals.size(); ++i)
        CHECK(trace.intervals[i].first == doctest::Approx(trace.intervals[i - 1].second));
    for (const auto& [a, b] : trace.intervals) CHECK(b > a);
}

TEST_CASE("training step errors on wrong frame counts") {
    auto cfg = tiny_run_config(5);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);
    auto [past, future] = split_clip(data.clips[0], 2, 5);  // wrong N and M

    ad::Tape<double> tape;
    BoundParams<double> p(tape, model.live());
    RandomSource rs(13);
    Rng rts = rs.stream("ts"), reps = rs.stream("eps"), rw = rs.stream("w");
    CHECK_THROWS_AS(training_loss(p, model, past, future, cfg.training, rts, reps, rw),
                    std::invalid_argument);
}

TEST_CASE("training step is deterministic given the seed") {
    auto cfg = tiny_run_config(6);
    auto data = tiny_dataset(cfg);

    auto run_once = [&]() {
        auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
        AdamW<double> opt(model.params.size(), cfg.training.weight_decay);
        auto [past, future] = split_clip(data.clips[0], cfg.training.past_frames,
                                         cfg.training.future_pool);
        const double loss =
            training_step(model, opt, past, future, cfg.training, RandomSource(cfg.seed));
        return std::make_pair(loss, model.params.values());
    };
    auto [l1, p1] = run_once();
    auto [l2, p2] = run_once();
    CHECK(l1 == l2);
    CHECK((p1 == p2).all());
    CHECK(l1 > 0.0);
}

TEST_CASE("initial loss is about 1 per pixel with the zero-initialized head") {
    auto cfg = tiny_run_config(7);
    cfg.data.num_clips = 64;
    cfg.training.batch_size = 64;
    finalize_run_config(cfg);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);

    std::vector<std::pair<FrameSequence<double>, FrameSequence<double>>> pairs;
    std::vector<BatchItem<double>> batch;
    for (const auto& clip : data.clips)
        pairs.push_back(split_clip(clip, cfg.training.past_frames, cfg.training.future_pool));
    for (auto& pr : pairs) batch.push_back({&pr.first, &pr.second});

    AdamW<double> opt(model.params.size(), cfg.training.weight_decay);
    const double loss = batch_training_step(model, opt, batch, cfg.training,
                                            RandomSource(cfg.seed), StepKey{0, 0}, cfg.training.lr);
    CHECK(std::abs(loss - 1.0) < 0.05);
}

TEST_CASE("train loop: step counts, checkpoints per epoch, loss records") {
    auto cfg = tiny_run_config(8);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    AdamW<double> opt(model.params.size(), cfg.training.weight_decay);
    auto data = tiny_dataset(cfg);

    int checkpoints = 0;
    auto history = train(model, opt, data, cfg.training, 0,
                         [&](Eigen::Index, Eigen::Index) { ++checkpoints; });
    // 8 clips, batch 4, 2 epochs -> 4 optimizer steps, 2 checkpoints
    CHECK(history.size() == 4);
    CHECK(checkpoints == 2);
    CHECK(opt.t == 4);
    for (const auto& rec : history) {
        CHECK(std::isfinite(rec.loss));
        CHECK(rec.lr > 0);
        CHECK(rec.lr <= cfg.training.lr);
    }
    CHECK(history[0].epoch == 0);
    CHECK(history[3].epoch == 1);
    CHECK(history[3].step == 3);
}

TEST_CASE("checkpoint round trip is bit exact and rejects corruption") {
    auto cfg = tiny_run_config(9);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    AdamW<double> opt(model.params.size(), cfg.training.weight_decay);
    auto data = tiny_dataset(cfg);
    train(model, opt, data, cfg.training);

    const auto path = std::filesystem::temp_directory_path() / "stdiff_test_ckpt.stdc";
    save_checkpoint(path, model, opt, cfg, 2, 4);

    auto loaded = load_checkpoint<double>(path);
    CHECK((loaded.model.params.values() == model.params.values()).all());
    CHECK((loaded.model.ema == model.ema).all());
    CHECK((loaded.opt.m == opt.m).all());
    CHECK((loaded.opt.v == opt.v).all());
    CHECK(loaded.opt.t == opt.t);
    CHECK(loaded.epochs_done == 2);
    CHECK(loaded.global_step == 4);
    CHECK(loaded.hash == config_hash(cfg));

    // wrong schema version
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t bad = 99;
        f.write(reinterpret_cast<const char*>(&bad), 4);
    }
    CHECK_THROWS_AS(load_checkpoint<double>(path), IntegrityError);

    // truncation
    save_checkpoint(path, model, opt, cfg, 2, 4);
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 64);
    CHECK_THROWS_AS(load_checkpoint<double>(path), IntegrityError);
    std::filesystem::remove(path);
}

TEST_CASE("resumed training reproduces the uninterrupted run") {
    auto cfg = tiny_run_config(10);
    cfg.training.epochs = 4;
    finalize_run_config(cfg);
    auto data = tiny_dataset(cfg);

    // uninterrupted: 4 epochs
    auto model_a = STDiffModel<double>::create(cfg.model, cfg.seed);
    AdamW<double> opt_a(model_a.params.size(), cfg.training.weight_decay);
    auto hist_a = train(model_a, opt_a, data, cfg.training);

    // interrupted: 2 epochs, checkpoint, reload, resume
    const auto path = std::filesystem::temp_directory_path() / "stdiff_test_resume.stdc";
    {
        auto model_b = STDiffModel<double>::create(cfg.model, cfg.seed);
        AdamW<double> opt_b(model_b.params.size(), cfg.training.weight_decay);
        auto tc_half = cfg.training;
        tc_half.epochs = 2;
        train(model_b, opt_b, data, tc_half);
        save_checkpoint(path, model_b, opt_b, cfg, 2, 4);
    }
    auto resumed = load_checkpoint<double>(path);
    auto hist_b = train(resumed.model, resumed.opt, data, cfg.training, resumed.epochs_done);
    std::filesystem::remove(path);

    CHECK((model_a.params.values() == resumed.model.params.values()).all());
    CHECK((model_a.ema == resumed.model.ema).all());
    REQUIRE(hist_b.size() == 4);
    // resumed losses equal the back half of the uninterrupted history
    CHECK(hist_a[4].loss == hist_b[0].loss);
    CHECK(hist_a[7].loss == hist_b[3].loss);
}

TEST_CASE("predict: single and fractional future times") {
    auto cfg = tiny_run_config(11);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);
    auto [past, future] = split_clip(data.clips[2], 3, 4);

    RandomSource rs(17);
    auto one = predict(model, past, {4.0}, cfg.sample_steps, rs, PredictMode::sde);
    CHECK(one.size() == 1);
    CHECK(one.times[0] == 4.0);
    CHECK(one.frames[0].pixels.shape == past.frames[0].pixels.shape);

    auto frac = predict(model, past, {3.5, 4.0, 5.5}, cfg.sample_steps, rs, PredictMode::sde);
    CHECK(frac.size() == 3);
    CHECK(frac.times[2] == 5.5);
    for (const auto& f : frac.frames) {
        CHECK(f.pixels.all_finite());
        CHECK(f.pixels.data.abs().maxCoeff() <= 1.0);
    }

    CHECK_THROWS_AS(predict(model, past, {3.5, 3.5}, 10, rs, PredictMode::sde),
                    std::invalid_argument);
    CHECK_THROWS_AS(predict(model, past, {2.0}, 10, rs, PredictMode::sde), std::invalid_argument);
    CHECK_THROWS_AS(predict(model, past, {}, 10, rs, PredictMode::sde), std::invalid_argument);
}

TEST_CASE("predict determinism: seeds and modes") {
    auto cfg = tiny_run_config(12);
    auto model = STDiffModel<double>::create(cfg.model, cfg.seed);
    auto data = tiny_dataset(cfg);
    auto [past, future] = split_clip(data.clips[3], 3, 4);
    const std::vector<double> times{4.0, 5.0};

    RandomSource rs(19);
    auto a = predict(model, past, times, 10, rs, PredictMode::sde, 0);
    auto b = predict(model, past, times, 10, rs, PredictMode::sde, 0);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK((a.frames[i].pixels.data == b.frames[i].pixels.data).all());

    auto c = predict(model, past, times, 10, rs, PredictMode::sde, 1);
    CHECK((a.frames[0].pixels.data - c.frames[0].pixels.data).abs().maxCoeff() > 0.0);

    auto o1 = predict(model, past, times, 10, rs, PredictMode::ode, 0);
    auto o2 = predict(model, past, times, 10, rs, PredictMode::ode, 0);
    for (std::size_t i = 0; i < o1.size(); ++i)
        CHECK((o1.frames[i].pixels.data == o2.frames[i].pixels.data).all());
}

TEST_CASE("run config: canonical json, hash stability, unknown keys") {
    auto cfg = tiny_run_config(13);
    const std::string js = canonical_config_json(cfg);
    auto reparsed = parse_run_config(js);
    CHECK(canonical_config_json(reparsed) == js);
    CHECK(config_hash(reparsed) == config_hash(cfg));

    CHECK_THROWS_AS(parse_run_config("{\"sead\": 3}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("{\"training\": {\"lr\": 0.1, \"nope\": 1}}"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_run_config("not json"), std::invalid_argument);
}
