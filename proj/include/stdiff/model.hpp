#ifndef STDIFF_MODEL_HPP
#define STDIFF_MODEL_HPP

#include "stdiff/motion_encoder.hpp"
#include "stdiff/motion_sde.hpp"
#include "stdiff/schedule.hpp"
#include "stdiff/unet.hpp"

namespace stdiff {

// Full model hyperparameters. finalize() propagates the frame geometry into
// the submodule configs and must be called before create().
struct ModelConfig {
    Eigen::Index frame_channels = 1;
    Eigen::Index frame_height = 32;
    Eigen::Index frame_width = 32;

    MotionEncoderConfig encoder;
    DriftDiffusionConfig sde_net;
    UNetConfig unet;
    SdeSolverConfig solver;

    Eigen::Index schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    void finalize() {
        if (frame_height < 8 || frame_width < 8 || frame_height % 4 != 0 || frame_width % 4 != 0)
            throw std::invalid_argument(
                "ModelConfig: frame dims must be >= 8 and divisible by 4");
        encoder.in_channels = frame_channels;
        sde_net.motion_channels = encoder.motion_channels;
        const auto [mh, mw] = MotionEncoderConfig::pooled_dims(frame_height, frame_width);
        sde_net.motion_height = mh;
        sde_net.motion_width = mw;
        unet.frame_channels = frame_channels;
        unet.motion_channels = encoder.motion_channels;
        solver.validate();
        if (schedule_steps < 2 || !(beta_start > 0 && beta_start < beta_end && beta_end < 1))
            throw std::invalid_argument("ModelConfig: bad schedule parameters");
    }

    Shape frame_shape() const { return Shape::chw(frame_channels, frame_height, frame_width); }
    Shape motion_shape() const {
        return Shape::chw(sde_net.motion_channels, sde_net.motion_height, sde_net.motion_width);
    }
};

// All learnable state: live parameters plus the EMA shadow used at inference.
template <typename S>
struct STDiffModel {
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

    ModelConfig cfg;
    ParamRegistry<S> params;
    Vec ema;
    NoiseSchedule<S> schedule;

    static STDiffModel create(ModelConfig cfg, std::uint64_t seed) {
        cfg.finalize();
        STDiffModel m;
        m.cfg = cfg;
        declare_motion_encoder(m.params, cfg.encoder);
        declare_drift_diffusion(m.params, cfg.sde_net);
        declare_noise_predictor(m.params, cfg.unet);
        m.params.allocate();
        m.params.init_all(RandomSource(seed).stream("init"));
        m.ema = m.params.values();
        m.schedule = make_linear_schedule<S>(cfg.schedule_steps, static_cast<S>(cfg.beta_start),
                                             static_cast<S>(cfg.beta_end));
        return m;
    }

    ParamSource<S> live() const { return ParamSource<S>::live(params); }
    ParamSource<S> ema_source() const { return ParamSource<S>::frozen(params, ema); }
};

// shadow <- decay * shadow + (1 - decay) * live
template <typename S>
void ema_update(STDiffModel<S>& model, double decay) {
    if (decay < 0 || decay >= 1)
        throw std::invalid_argument("ema_update: decay must be in [0, 1)");
    const S d = static_cast<S>(decay);
    model.ema = d * model.ema + (S(1) - d) * model.params.values();
}

}  // namespace stdiff

#endif
