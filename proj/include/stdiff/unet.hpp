#ifndef STDIFF_UNET_HPP
#define STDIFF_UNET_HPP

#include "stdiff/autodiff.hpp"
#include "stdiff/diffusion.hpp"
#include "stdiff/params.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace stdiff {

// Conditional noise-prediction UNet. The previous clean frame is channel-
// concatenated with the noisy frame at the input; the motion feature enters
// every residual block through spatially-adaptive denormalization (scale and
// shift maps convolved at the motion state's native resolution, bilinearly
// resized to the block's); the diffusion level enters as a sinusoidal
// embedding passed through a small MLP and projected per block.
struct UNetConfig {
    Eigen::Index frame_channels = 1;
    Eigen::Index motion_channels = 64;
    std::array<Eigen::Index, 3> widths{64, 128, 256};
    Eigen::Index blocks_per_res = 2;
    Eigen::Index emb_dim = 64;
    Eigen::Index spade_hidden = 32;
};

// Groups always span >= 2 channels (when available) so that per-channel
// conditioning shifts survive the group-mean subtraction.
inline Eigen::Index norm_groups(Eigen::Index channels) {
    for (Eigen::Index g : {8, 4, 2})
        if (channels % g == 0 && channels / g >= 2) return g;
    return 1;
}

namespace unet_detail {

template <typename S>
void declare_conv(ParamRegistry<S>& reg, const std::string& name, Eigen::Index cout,
                  Eigen::Index cin, Init init = Init::kaiming) {
    reg.declare(name + ".w", Shape{cout, cin, 3, 3}, init);
    reg.declare(name + ".b", Shape{cout}, Init::zeros);
}

template <typename S>
void declare_spade(ParamRegistry<S>& reg, const std::string& name, Eigen::Index channels,
                   const UNetConfig& cfg) {
    declare_conv(reg, name + ".shared", cfg.spade_hidden, cfg.motion_channels);
    declare_conv(reg, name + ".scale", channels, cfg.spade_hidden, Init::zeros);
    declare_conv(reg, name + ".shift", channels, cfg.spade_hidden, Init::zeros);
}

template <typename S>
void declare_res_block(ParamRegistry<S>& reg, const std::string& name, Eigen::Index cin,
                       Eigen::Index cout, const UNetConfig& cfg) {
    declare_spade(reg, name + ".spade0", cin, cfg);
    declare_conv(reg, name + ".conv1", cout, cin);
    reg.declare(name + ".emb.w", Shape{cout, cfg.emb_dim}, Init::kaiming);
    reg.declare(name + ".emb.b", Shape{cout}, Init::zeros);
    declare_spade(reg, name + ".spade1", cout, cfg);
    declare_conv(reg, name + ".conv2", cout, cout, Init::zeros);
    if (cin != cout) {
        reg.declare(name + ".skip.w", Shape{cout, cin, 1, 1}, Init::kaiming);
        reg.declare(name + ".skip.b", Shape{cout}, Init::zeros);
    }
}

// gn(x) * (1 + scale(m)) + shift(m)
template <typename S>
ad::Var<S> spade(BoundParams<S>& p, const std::string& name, ad::Var<S> x, ad::Var<S> m) {
    const kernels::ConvSpec c3{3, 3, 1, 1};
    ad::Var<S> hm = ad::relu(ad::conv2d(m, p(name + ".shared.w"), p(name + ".shared.b"), c3));
    ad::Var<S> sc = ad::conv2d(hm, p(name + ".scale.w"), p(name + ".scale.b"), c3);
    ad::Var<S> sh = ad::conv2d(hm, p(name + ".shift.w"), p(name + ".shift.b"), c3);
    sc = ad::bilinear_resize(sc, x.shape()[1], x.shape()[2]);
    sh = ad::bilinear_resize(sh, x.shape()[1], x.shape()[2]);
    ad::Var<S> gn = ad::group_norm(x, norm_groups(x.shape()[0]));
    return ad::add(ad::mul(gn, ad::add_scalar(sc, S(1))), sh);
}

template <typename S>
ad::Var<S> res_block(BoundParams<S>& p, const std::string& name, ad::Var<S> x, ad::Var<S> m,
                     ad::Var<S> emb, Eigen::Index cout) {
    const kernels::ConvSpec c3{3, 3, 1, 1};
    const Eigen::Index cin = x.shape()[0];
    ad::Var<S> h = ad::silu(spade(p, name + ".spade0", x, m));
    h = ad::conv2d(h, p(name + ".conv1.w"), p(name + ".conv1.b"), c3);
    ad::Var<S> e = ad::linear(ad::silu(emb), p(name + ".emb.w"), p(name + ".emb.b"));
    h = ad::broadcast_channel_add(h, e);
    h = ad::silu(spade(p, name + ".spade1", h, m));
    h = ad::conv2d(h, p(name + ".conv2.w"), p(name + ".conv2.b"), c3);
    ad::Var<S> skip = x;
    if (cin != cout)
        skip = ad::conv2d(x, p(name + ".skip.w"), p(name + ".skip.b"),
                          kernels::ConvSpec{1, 1, 1, 0});
    return ad::add(skip, h);
}

template <typename S>
Tensor<S> sinusoidal_embedding(Eigen::Index level, Eigen::Index dim) {
    Tensor<S> e(Shape{dim});
    const Eigen::Index half = dim / 2;
    for (Eigen::Index i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        e.data[i] = static_cast<S>(std::sin(static_cast<double>(level) * freq));
        e.data[half + i] = static_cast<S>(std::cos(static_cast<double>(level) * freq));
    }
    return e;
}

}  // namespace unet_detail

template <typename S>
void declare_noise_predictor(ParamRegistry<S>& reg, const UNetConfig& cfg) {
    using namespace unet_detail;
    const auto [w0, w1, w2] = cfg.widths;
    reg.declare("unet.emb.l1.w", Shape{cfg.emb_dim, cfg.emb_dim}, Init::kaiming);
    reg.declare("unet.emb.l1.b", Shape{cfg.emb_dim}, Init::zeros);
    reg.declare("unet.emb.l2.w", Shape{cfg.emb_dim, cfg.emb_dim}, Init::kaiming);
    reg.declare("unet.emb.l2.b", Shape{cfg.emb_dim}, Init::zeros);

    declare_conv(reg, "unet.stem", w0, 2 * cfg.frame_channels);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        declare_res_block(reg, "unet.d0.b" + std::to_string(k), w0, w0, cfg);
    declare_conv(reg, "unet.down0", w1, w0);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        declare_res_block(reg, "unet.d1.b" + std::to_string(k), w1, w1, cfg);
    declare_conv(reg, "unet.down1", w2, w1);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        declare_res_block(reg, "unet.d2.b" + std::to_string(k), w2, w2, cfg);
    declare_res_block(reg, "unet.mid", w2, w2, cfg);
    declare_conv(reg, "unet.up1", w1, w2);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        declare_res_block(reg, "unet.u1.b" + std::to_string(k),
                          k == 0 ? w1 + w1 : w1, w1, cfg);
    declare_conv(reg, "unet.up0", w0, w1);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        declare_res_block(reg, "unet.u0.b" + std::to_string(k),
                          k == 0 ? w0 + w0 : w0, w0, cfg);
    reg.declare("unet.head.gn.g", Shape{w0}, Init::ones);
    reg.declare("unet.head.gn.b", Shape{w0}, Init::zeros);
    declare_conv(reg, "unet.head", cfg.frame_channels, w0, Init::zeros);
}

// eps_theta(x^l, x^0_prev, m, l); x_l and x_prev enter as constants, the
// motion feature as a Var so gradients reach the motion path during training.
template <typename S>
ad::Var<S> predict_noise(BoundParams<S>& p, const UNetConfig& cfg, const Tensor<S>& x_l,
                         const Tensor<S>& x_prev, ad::Var<S> m, Eigen::Index level) {
    using namespace unet_detail;
    require_rank3(x_l, "predict_noise");
    require_shape(x_prev, x_l.shape, "predict_noise");
    if (x_l.shape[0] != cfg.frame_channels)
        throw std::invalid_argument("predict_noise: expected " +
                                    std::to_string(cfg.frame_channels) + " frame channels, got " +
                                    std::to_string(x_l.shape[0]));
    if (m.shape()[0] != cfg.motion_channels)
        throw std::invalid_argument("predict_noise: motion feature has " +
                                    std::to_string(m.shape()[0]) + " channels, configured " +
                                    std::to_string(cfg.motion_channels));
    if (x_l.shape[1] % 4 != 0 || x_l.shape[2] % 4 != 0)
        throw std::invalid_argument("predict_noise: frame dims must be divisible by 4, got " +
                                    x_l.shape.str());
    if (level < 1) throw std::invalid_argument("predict_noise: level must be >= 1");

    ad::Tape<S>& t = p.tape();
    const kernels::ConvSpec c3{3, 3, 1, 1};
    const kernels::ConvSpec c3s2{3, 3, 2, 1};

    ad::Var<S> emb = t.constant(sinusoidal_embedding<S>(level, cfg.emb_dim));
    emb = ad::linear(emb, p("unet.emb.l1.w"), p("unet.emb.l1.b"));
    emb = ad::linear(ad::silu(emb), p("unet.emb.l2.w"), p("unet.emb.l2.b"));

    ad::Var<S> x = ad::concat_channels(t.constant(x_l), t.constant(x_prev));
    ad::Var<S> h = ad::conv2d(x, p("unet.stem.w"), p("unet.stem.b"), c3);

    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        h = res_block(p, "unet.d0.b" + std::to_string(k), h, m, emb, cfg.widths[0]);
    ad::Var<S> skip0 = h;
    h = ad::conv2d(h, p("unet.down0.w"), p("unet.down0.b"), c3s2);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        h = res_block(p, "unet.d1.b" + std::to_string(k), h, m, emb, cfg.widths[1]);
    ad::Var<S> skip1 = h;
    h = ad::conv2d(h, p("unet.down1.w"), p("unet.down1.b"), c3s2);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        h = res_block(p, "unet.d2.b" + std::to_string(k), h, m, emb, cfg.widths[2]);
    h = res_block(p, "unet.mid", h, m, emb, cfg.widths[2]);

    h = ad::nearest_upsample2(h);
    h = ad::conv2d(h, p("unet.up1.w"), p("unet.up1.b"), c3);
    h = ad::concat_channels(h, skip1);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        h = res_block(p, "unet.u1.b" + std::to_string(k), h, m, emb, cfg.widths[1]);
    h = ad::nearest_upsample2(h);
    h = ad::conv2d(h, p("unet.up0.w"), p("unet.up0.b"), c3);
    h = ad::concat_channels(h, skip0);
    for (Eigen::Index k = 0; k < cfg.blocks_per_res; ++k)
        h = res_block(p, "unet.u0.b" + std::to_string(k), h, m, emb, cfg.widths[0]);

    h = ad::group_norm(h, norm_groups(h.shape()[0]));
    h = ad::channel_affine(h, p("unet.head.gn.g"), p("unet.head.gn.b"));
    h = ad::conv2d(ad::silu(h), p("unet.head.w"), p("unet.head.b"), c3);
    return h;
}

// Inference wrapper on plain tensors (no gradient bookkeeping).
template <typename S>
Tensor<S> predict_noise_eval(const ParamSource<S>& src, const UNetConfig& cfg,
                             const NoisyFrame<S>& x_l, const Frame<S>& x_prev,
                             const Tensor<S>& m, Eigen::Index level) {
    ad::Tape<S> t(false);
    BoundParams<S> p(t, src);
    return predict_noise(p, cfg, x_l.pixels, x_prev.pixels, t.constant(m), level).value();
}

}  // namespace stdiff

#endif
