#ifndef STDIFF_METRICS_HPP
#define STDIFF_METRICS_HPP

#include "stdiff/kernels.hpp"
#include "stdiff/random.hpp"
#include "stdiff/tensor.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace stdiff {

// Stacked stochastic predictions: n_examples test inputs, n_samples random
// predictions each, n_frames per clip. Values live in [0, 1] I/O space.
template <typename S>
struct PredictionSet {
    Eigen::Index n_examples = 0, n_samples = 0, n_frames = 0;
    Shape frame_shape;
    std::vector<Tensor<S>> frames;  // index ((n * n_samples + s) * n_frames + t)

    static PredictionSet create(Eigen::Index n, Eigen::Index s, Eigen::Index t, Shape fs) {
        PredictionSet out;
        out.n_examples = n;
        out.n_samples = s;
        out.n_frames = t;
        out.frame_shape = std::move(fs);
        out.frames.resize(static_cast<std::size_t>(n * s * t));
        return out;
    }

    Tensor<S>& at(Eigen::Index n, Eigen::Index s, Eigen::Index t) {
        return frames[static_cast<std::size_t>((n * n_samples + s) * n_frames + t)];
    }
    const Tensor<S>& at(Eigen::Index n, Eigen::Index s, Eigen::Index t) const {
        return frames[static_cast<std::size_t>((n * n_samples + s) * n_frames + t)];
    }

    void validate() const {
        for (const auto& f : frames) {
            require_shape(f, frame_shape, "PredictionSet");
            if ((f.data < S(0)).any() || (f.data > S(1)).any())
                throw std::invalid_argument("PredictionSet: values outside [0,1]");
        }
    }
};

template <typename S>
using PerceptualDistance = std::function<double(const Tensor<S>&, const Tensor<S>&)>;

// Diversity over a prediction set: mean frame-wise distance over the S
// adjacent sample pairs plus the wrap-around pair, U = N*S*T. Zero for any
// deterministic predictor; reproducible (the pairing is fixed).
template <typename S>
double ilpips(const PredictionSet<S>& preds, const PerceptualDistance<S>& rho) {
    if (preds.n_samples < 2)
        throw std::invalid_argument("ilpips: need at least 2 samples per example, got " +
                                    std::to_string(preds.n_samples));
    double acc = 0;
    for (Eigen::Index n = 0; n < preds.n_examples; ++n)
        for (Eigen::Index t = 0; t < preds.n_frames; ++t) {
            for (Eigen::Index s = 0; s + 1 < preds.n_samples; ++s)
                acc += rho(preds.at(n, s, t), preds.at(n, s + 1, t));
            acc += rho(preds.at(n, 0, t), preds.at(n, preds.n_samples - 1, t));
        }
    const double U = static_cast<double>(preds.n_examples) *
                     static_cast<double>(preds.n_samples) *
                     static_cast<double>(preds.n_frames);
    return acc / U;
}

enum class BestDirection { max, min };

struct BestOfResult {
    std::vector<double> per_example;
    double mean = 0;
};

// Per example: best over the S samples of the frame-mean metric against the
// ground-truth clip.
template <typename S>
BestOfResult best_of_s(const PredictionSet<S>& preds,
                       const std::vector<std::vector<Tensor<S>>>& ground_truth,
                       const std::function<double(const Tensor<S>&, const Tensor<S>&)>& metric,
                       BestDirection direction) {
    if (static_cast<Eigen::Index>(ground_truth.size()) != preds.n_examples)
        throw std::invalid_argument("best_of_s: ground truth example count mismatch");
    BestOfResult out;
    for (Eigen::Index n = 0; n < preds.n_examples; ++n) {
        const auto& gt = ground_truth[static_cast<std::size_t>(n)];
        if (static_cast<Eigen::Index>(gt.size()) != preds.n_frames)
            throw std::invalid_argument("best_of_s: ground truth frame count mismatch at example " +
                                        std::to_string(n));
        double best = direction == BestDirection::max ? -std::numeric_limits<double>::infinity()
                                                      : std::numeric_limits<double>::infinity();
        for (Eigen::Index s = 0; s < preds.n_samples; ++s) {
            double acc = 0;
            for (Eigen::Index t = 0; t < preds.n_frames; ++t)
                acc += metric(preds.at(n, s, t), gt[static_cast<std::size_t>(t)]);
            const double score = acc / static_cast<double>(preds.n_frames);
            best = direction == BestDirection::max ? std::max(best, score) : std::min(best, score);
        }
        out.per_example.push_back(best);
    }
    for (double v : out.per_example) out.mean += v;
    out.mean /= static_cast<double>(out.per_example.empty() ? 1 : out.per_example.size());
    return out;
}

// PSNR in dB for [0,1] images; identical inputs give +infinity.
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b) {
    require_shape(b, a.shape, "psnr");
    const double mse = (a.data.template cast<double>() - b.data.template cast<double>())
                           .square()
                           .mean();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM with a Gaussian window (11x11, sigma 1.5, shrunk to fit small
// frames), standard constants, valid-region aggregation, data range 1.
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
    require_shape(b, a.shape, "ssim");
    require_rank3(a, "ssim");
    const Eigen::Index C = a.shape[0], H = a.shape[1], W = a.shape[2];
    Eigen::Index win = std::min<Eigen::Index>(11, std::min(H, W));
    if (win % 2 == 0) --win;
    const Eigen::Index r = win / 2;
    std::vector<double> g(static_cast<std::size_t>(win));
    double gsum = 0;
    for (Eigen::Index i = 0; i < win; ++i) {
        const double d = static_cast<double>(i - r);
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        gsum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= gsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    Eigen::Index count = 0;
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index y = r; y + r < H; ++y)
            for (Eigen::Index x = r; x + r < W; ++x) {
                double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
                for (Eigen::Index dy = -r; dy <= r; ++dy)
                    for (Eigen::Index dx = -r; dx <= r; ++dx) {
                        const double w = g[static_cast<std::size_t>(dy + r)] *
                                         g[static_cast<std::size_t>(dx + r)];
                        const double pa = static_cast<double>(a.chw(c, y + dy, x + dx));
                        const double pb = static_cast<double>(b.chw(c, y + dy, x + dx));
                        ma += w * pa;
                        mb += w * pb;
                        va += w * pa * pa;
                        vb += w * pb * pb;
                        cov += w * pa * pb;
                    }
                va -= ma * ma;
                vb -= mb * mb;
                cov -= ma * mb;
                const double num = (2 * ma * mb + c1) * (2 * cov + c2);
                const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                total += num / den;
                ++count;
            }
    return total / static_cast<double>(count == 0 ? 1 : count);
}

// Pluggable stand-in for a pretrained perceptual distance: L2 between
// unit-normalized activations of a fixed seeded 3-block conv net. Any fixed
// rho keeps relative comparisons (e.g. sde vs ode diversity) meaningful.
template <typename S>
double random_feature_distance(const Tensor<S>& a, const Tensor<S>& b, std::uint64_t seed) {
    require_shape(b, a.shape, "random_feature_distance");
    require_rank3(a, "random_feature_distance");
    const Eigen::Index cin = a.shape[0];
    const Eigen::Index widths[4] = {cin, 8, 16, 32};

    Rng rng = RandomSource(seed).stream("feature_net");
    std::vector<Tensor<S>> kernels_w;
    for (int i = 0; i < 3; ++i) {
        Tensor<S> w(Shape{widths[i + 1], widths[i], 3, 3});
        const double bound = std::sqrt(3.0) * std::sqrt(2.0 / (9.0 * static_cast<double>(widths[i])));
        for (Eigen::Index j = 0; j < w.numel(); ++j)
            w.data[j] = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
        kernels_w.push_back(std::move(w));
    }

    auto features = [&](const Tensor<S>& x) {
        Tensor<S> h = x;
        const Tensor<S> no_bias;
        for (int i = 0; i < 3; ++i) {
            h = kernels::conv2d_forward(h, kernels_w[static_cast<std::size_t>(i)], no_bias,
                                        kernels::ConvSpec{3, 3, 1, 1});
            h.data = h.data.max(S(0));
            if (i < 2 && h.shape[1] % 2 == 0 && h.shape[2] % 2 == 0 && h.shape[1] >= 2 &&
                h.shape[2] >= 2) {
                std::vector<Eigen::Index> arg;
                h = kernels::maxpool2_forward(h, arg);
            }
        }
        Eigen::ArrayXd f = h.data.template cast<double>();
        const double norm = std::sqrt(f.square().sum());
        if (norm > 1e-12) f /= norm;
        return f;
    };

    const Eigen::ArrayXd fa = features(a), fb = features(b);
    return std::sqrt((fa - fb).square().sum());
}

}  // namespace stdiff

#endif
