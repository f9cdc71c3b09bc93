#ifndef STDIFF_PREDICT_HPP
#define STDIFF_PREDICT_HPP

#include "stdiff/model.hpp"
#include "stdiff/training.hpp"

#include <vector>

namespace stdiff {

enum class PredictMode { sde, ode };

// One reverse-diffusion generation conditioned on the previous clean frame
// and the motion feature.
template <typename S>
Frame<S> sample_frame(const ParamSource<S>& src, const UNetConfig& cfg, const Frame<S>& x_prev,
                      const Tensor<S>& m, Eigen::Index steps, const NoiseSchedule<S>& sched,
                      Rng& rng) {
    auto predictor = [&](const Tensor<S>& x, Eigen::Index level) {
        return predict_noise_eval(src, cfg, NoisyFrame<S>{x, level}, x_prev, m, level);
    };
    return sample_frame_with<S>(predictor, x_prev.pixels.shape, steps, sched, rng);
}

// Autoregressive continuous-time inference on the EMA weights: the motion
// state is integrated across consecutive requested times (arbitrary positive
// reals), each frame is generated conditioned on the previously generated
// frame (the last observed frame for the first step). In ode mode the motion
// path is deterministic; frame sampling noise is seeded independently.
template <typename S>
FrameSequence<S> predict(const STDiffModel<S>& model, const FrameSequence<S>& past,
                         const std::vector<double>& future_times, Eigen::Index steps,
                         const RandomSource& rs, PredictMode mode,
                         std::uint64_t sample_index = 0) {
    if (past.size() < 2) throw std::invalid_argument("predict: need at least 2 past frames");
    if (!past.unit_spaced())
        throw std::invalid_argument("predict: past frames must be unit-spaced");
    if (future_times.empty()) throw std::invalid_argument("predict: no future times requested");
    const double t0 = past.times.back();
    for (std::size_t i = 0; i < future_times.size(); ++i) {
        const double prev = i == 0 ? t0 : future_times[i - 1];
        if (!(future_times[i] > prev))
            throw std::invalid_argument(
                "predict: future times must be strictly increasing and exceed the last "
                "observed time " +
                std::to_string(t0));
    }

    const ParamSource<S> src = model.ema_source();
    Rng rng_wiener = rs.stream("predict_wiener", sample_index);
    Rng rng_eps = rs.stream("predict_eps", sample_index);

    ad::Tape<S> tape(false);
    BoundParams<S> p(tape, src);
    ad::Var<S> m = encode_past(p, model.cfg.encoder, past);

    std::vector<Frame<S>> frames;
    Frame<S> prev_frame = past.frames.back();
    double t_prev = t0;
    for (double t : future_times) {
        if (mode == PredictMode::sde)
            m = sde_integrate_net(p, model.cfg.sde_net, m, t_prev, t, model.cfg.solver,
                                  rng_wiener);
        else
            m = ode_integrate_net(p, model.cfg.sde_net, m, t_prev, t, model.cfg.solver.dt);
        Frame<S> f =
            sample_frame(src, model.cfg.unet, prev_frame, m.value(), steps, model.schedule, rng_eps);
        frames.push_back(f);
        prev_frame = std::move(f);
        t_prev = t;
    }
    return FrameSequence<S>(std::move(frames), future_times);
}

}  // namespace stdiff

#endif
