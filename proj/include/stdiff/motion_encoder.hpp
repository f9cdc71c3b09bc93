#ifndef STDIFF_MOTION_ENCODER_HPP
#define STDIFF_MOTION_ENCODER_HPP

#include "stdiff/autodiff.hpp"
#include "stdiff/frame.hpp"
#include "stdiff/params.hpp"

#include <array>
#include <string>
#include <vector>

namespace stdiff {

// Signed difference of two consecutive frames; entries lie in [-2, 2].
template <typename S>
struct DifferenceImage {
    Tensor<S> pixels;
};

// Past-motion encoder: per-step hidden features from difference images via a
// 4-stage Conv-ReLU-MaxPool extractor, folded into a motion state by a
// single-layer convolutional GRU. Spatial dims shrink by 16 (four 2x pools);
// a stage skips its pool once a dim can no longer be halved evenly, so small
// frames (8x8) still encode.
struct MotionEncoderConfig {
    Eigen::Index in_channels = 1;
    Eigen::Index motion_channels = 64;
    std::array<Eigen::Index, 3> cnn_widths{16, 32, 64};

    static std::pair<Eigen::Index, Eigen::Index> pooled_dims(Eigen::Index h, Eigen::Index w) {
        for (int stage = 0; stage < 4; ++stage)
            if (h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2) {
                h /= 2;
                w /= 2;
            }
        return {h, w};
    }
};

template <typename S>
void declare_motion_encoder(ParamRegistry<S>& reg, const MotionEncoderConfig& cfg) {
    const Eigen::Index chans[5] = {cfg.in_channels, cfg.cnn_widths[0], cfg.cnn_widths[1],
                                   cfg.cnn_widths[2], cfg.motion_channels};
    for (int i = 0; i < 4; ++i) {
        const std::string p = "menc.cnn" + std::to_string(i);
        reg.declare(p + ".w", Shape{chans[i + 1], chans[i], 3, 3}, Init::kaiming);
        reg.declare(p + ".b", Shape{chans[i + 1]}, Init::zeros);
    }
    const Eigen::Index cm = cfg.motion_channels;
    for (const char* gate : {"z", "r", "c"}) {
        const std::string p = std::string("menc.gru.") + gate;
        reg.declare(p + ".w", Shape{cm, 2 * cm, 3, 3}, Init::kaiming);
        reg.declare(p + ".b", Shape{cm}, Init::zeros);
    }
}

template <typename S>
std::vector<DifferenceImage<S>> difference_images(const FrameSequence<S>& past) {
    if (past.size() < 2)
        throw std::invalid_argument("difference_images: need at least 2 past frames, got " +
                                    std::to_string(past.size()));
    if (!past.unit_spaced())
        throw std::invalid_argument("difference_images: past frames must be unit-spaced");
    std::vector<DifferenceImage<S>> out;
    out.reserve(past.size() - 1);
    for (std::size_t i = 0; i + 1 < past.size(); ++i)
        out.push_back(DifferenceImage<S>{Tensor<S>(
            past.frames[i].pixels.shape,
            past.frames[i + 1].pixels.data - past.frames[i].pixels.data)});
    return out;
}

template <typename S>
ad::Var<S> cnn_extract(BoundParams<S>& p, const MotionEncoderConfig& cfg,
                       const DifferenceImage<S>& d) {
    if (d.pixels.shape[0] != cfg.in_channels)
        throw std::invalid_argument("cnn_extract: expected " + std::to_string(cfg.in_channels) +
                                    " channels, got " + std::to_string(d.pixels.shape[0]));
    if (d.pixels.shape[1] < 8 || d.pixels.shape[2] < 8)
        throw std::invalid_argument("cnn_extract: spatial dims must be at least 8, got " +
                                    d.pixels.shape.str());
    const kernels::ConvSpec conv{3, 3, 1, 1};
    ad::Var<S> h = p.tape().constant(d.pixels);
    for (int i = 0; i < 4; ++i) {
        const std::string pref = "menc.cnn" + std::to_string(i);
        h = ad::conv2d(h, p(pref + ".w"), p(pref + ".b"), conv);
        h = ad::relu(h);
        if (h.shape()[1] % 2 == 0 && h.shape()[2] % 2 == 0 && h.shape()[1] >= 2 &&
            h.shape()[2] >= 2)
            h = ad::maxpool2(h);
    }
    return h;
}

// z = sig(conv_z([h, m])), r = sig(conv_r([h, m])),
// mtilde = tanh(conv_c([h, r*m])), m' = (1-z)*m + z*mtilde.
template <typename S>
ad::Var<S> convgru_step(BoundParams<S>& p, const MotionEncoderConfig& cfg, ad::Var<S> m_prev,
                        ad::Var<S> h) {
    if (m_prev.shape() != h.shape())
        throw std::invalid_argument("convgru_step: state " + m_prev.shape().str() +
                                    " vs input " + h.shape().str());
    (void)cfg;
    const kernels::ConvSpec conv{3, 3, 1, 1};
    ad::Var<S> hm = ad::concat_channels(h, m_prev);
    ad::Var<S> z = ad::sigmoid(ad::conv2d(hm, p("menc.gru.z.w"), p("menc.gru.z.b"), conv));
    ad::Var<S> r = ad::sigmoid(ad::conv2d(hm, p("menc.gru.r.w"), p("menc.gru.r.b"), conv));
    ad::Var<S> cand_in = ad::concat_channels(h, ad::mul(r, m_prev));
    ad::Var<S> mtilde =
        ad::tanh_op(ad::conv2d(cand_in, p("menc.gru.c.w"), p("menc.gru.c.b"), conv));
    // (1-z)*m + z*mtilde
    return ad::add(ad::sub(m_prev, ad::mul(z, m_prev)), ad::mul(z, mtilde));
}

// Algorithm: m_1 = 0; fold the GRU over CNN features of d_2..d_N; return m_N.
template <typename S>
ad::Var<S> encode_past(BoundParams<S>& p, const MotionEncoderConfig& cfg,
                       const FrameSequence<S>& past) {
    const auto diffs = difference_images(past);
    const auto& fs = past.frames[0].pixels.shape;
    const auto [mh, mw] = MotionEncoderConfig::pooled_dims(fs[1], fs[2]);
    const Shape mshape = Shape::chw(cfg.motion_channels, mh, mw);
    ad::Var<S> m = p.tape().constant(Tensor<S>::zeros(mshape));
    for (const auto& d : diffs) m = convgru_step(p, cfg, m, cnn_extract(p, cfg, d));
    return m;
}

}  // namespace stdiff

#endif
