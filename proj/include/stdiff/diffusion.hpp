#ifndef STDIFF_DIFFUSION_HPP
#define STDIFF_DIFFUSION_HPP

#include "stdiff/frame.hpp"
#include "stdiff/random.hpp"
#include "stdiff/schedule.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace stdiff {

// Frame corrupted to diffusion level l; level 0 is the clean frame.
template <typename S>
struct NoisyFrame {
    Tensor<S> pixels;
    Eigen::Index level = 0;
};

template <typename S>
struct PosteriorParams {
    Tensor<S> mean;
    S variance = S(0);
};

// x^l = sqrt(abar_l) x0 + sqrt(1 - abar_l) eps, deterministic given eps.
template <typename S>
NoisyFrame<S> forward_sample(const Frame<S>& x0, Eigen::Index l, const Tensor<S>& eps,
                             const NoiseSchedule<S>& sched) {
    sched.check_level(l);
    require_shape(eps, x0.pixels.shape, "forward_sample");
    const S ab = sched.alpha_bar_at(l);
    NoisyFrame<S> out;
    out.level = l;
    out.pixels = Tensor<S>(x0.pixels.shape,
                           std::sqrt(ab) * x0.pixels.data + std::sqrt(S(1) - ab) * eps.data);
    return out;
}

// Exact reverse conditional posterior q(x^{l-1} | x^l, x^0):
//   mean = sqrt(abar_{l-1}) beta_l / (1-abar_l) * x0
//        + sqrt(alpha_l) (1-abar_{l-1}) / (1-abar_l) * x^l
//   var  = (1-abar_{l-1}) / (1-abar_l) * beta_l
template <typename S>
PosteriorParams<S> posterior_params(const NoisyFrame<S>& x_l, const Frame<S>& x0,
                                    const NoiseSchedule<S>& sched) {
    const Eigen::Index l = x_l.level;
    if (l == 0) throw std::invalid_argument("posterior_params: level 0 has no reverse posterior");
    sched.check_level(l);
    require_shape(x_l.pixels, x0.pixels.shape, "posterior_params");
    const S ab = sched.alpha_bar_at(l);
    const S ab_prev = sched.alpha_bar_at(l - 1);
    const S beta = sched.beta_at(l);
    const S alpha = sched.alpha_at(l);
    PosteriorParams<S> out;
    out.mean = Tensor<S>(x0.pixels.shape,
                         (std::sqrt(ab_prev) * beta / (S(1) - ab)) * x0.pixels.data +
                             (std::sqrt(alpha) * (S(1) - ab_prev) / (S(1) - ab)) * x_l.pixels.data);
    out.variance = (S(1) - ab_prev) / (S(1) - ab) * beta;
    return out;
}

// Posterior mean written in terms of the noise estimate, generalized to a
// jump from level l_hi down to l_lo < l_hi (the strided-subschedule form;
// l_lo = l_hi - 1 recovers the per-level DDPM step).
template <typename S>
Tensor<S> reverse_mean(const Tensor<S>& x, const Tensor<S>& eps_hat, Eigen::Index l_hi,
                       Eigen::Index l_lo, const NoiseSchedule<S>& sched) {
    if (l_lo >= l_hi) throw std::invalid_argument("reverse_mean: l_lo must be below l_hi");
    sched.check_level(l_hi);
    const S ab_hi = sched.alpha_bar_at(l_hi);
    const S ab_lo = sched.alpha_bar_at(l_lo);
    const S alpha_eff = ab_hi / ab_lo;
    const S beta_eff = S(1) - alpha_eff;
    return Tensor<S>(x.shape, (x.data - (beta_eff / std::sqrt(S(1) - ab_hi)) * eps_hat.data) /
                                  std::sqrt(alpha_eff));
}

template <typename S>
S reverse_variance(Eigen::Index l_hi, Eigen::Index l_lo, const NoiseSchedule<S>& sched) {
    const S ab_hi = sched.alpha_bar_at(l_hi);
    const S ab_lo = sched.alpha_bar_at(l_lo);
    return (S(1) - ab_lo) / (S(1) - ab_hi) * (S(1) - ab_hi / ab_lo);
}

// One ancestral reverse step l -> l-1. Noise is added for l > 1 only (the
// posterior variance vanishes at l = 1); rng == nullptr suppresses the
// variance term entirely (deterministic mode, used by oracle chains).
template <typename S>
NoisyFrame<S> reverse_step(const NoisyFrame<S>& x_l, const Tensor<S>& eps_hat,
                           const NoiseSchedule<S>& sched, Rng* rng) {
    const Eigen::Index l = x_l.level;
    if (l == 0) throw std::invalid_argument("reverse_step: already at level 0");
    sched.check_level(l);
    require_shape(eps_hat, x_l.pixels.shape, "reverse_step");
    NoisyFrame<S> out;
    out.level = l - 1;
    out.pixels = reverse_mean(x_l.pixels, eps_hat, l, l - 1, sched);
    if (rng && l > 1) {
        const S sd = std::sqrt(reverse_variance(l, l - 1, sched));
        Tensor<S> z = rng->template normal_tensor<S>(x_l.pixels.shape);
        out.pixels.data += sd * z.data;
    }
    return out;
}

// Evenly strided sub-schedule of `steps` levels in [1, L], ascending, always
// containing both endpoints (steps == L visits every level).
inline std::vector<Eigen::Index> strided_levels(Eigen::Index L, Eigen::Index steps) {
    if (steps < 1 || steps > L)
        throw std::invalid_argument("strided_levels: steps must be in [1, L]");
    std::vector<Eigen::Index> out;
    out.reserve(static_cast<std::size_t>(steps));
    if (steps == 1) {
        out.push_back(L);
        return out;
    }
    for (Eigen::Index j = 0; j < steps; ++j) {
        const double f = 1.0 + static_cast<double>(L - 1) * static_cast<double>(j) /
                                   static_cast<double>(steps - 1);
        out.push_back(static_cast<Eigen::Index>(std::llround(f)));
    }
    return out;
}

// Full ancestral chain from x^L ~ N(0,I) down to a clean frame, using an
// arbitrary noise predictor eps_hat = f(x_tensor, level). The strided
// sub-schedule uses the DDPM-ancestral form with recomputed posterior
// variances between visited levels. Output is clamped to [-1, 1].
template <typename S>
Frame<S> sample_frame_with(const std::function<Tensor<S>(const Tensor<S>&, Eigen::Index)>& predict,
                           const Shape& frame_shape, Eigen::Index steps,
                           const NoiseSchedule<S>& sched, Rng& rng) {
    const std::vector<Eigen::Index> levels = strided_levels(sched.L, steps);
    Tensor<S> x = rng.template normal_tensor<S>(frame_shape);
    for (std::size_t k = levels.size(); k-- > 0;) {
        const Eigen::Index l_hi = levels[k];
        const Eigen::Index l_lo = (k == 0) ? 0 : levels[k - 1];
        Tensor<S> eps_hat = predict(x, l_hi);
        Tensor<S> mean = reverse_mean(x, eps_hat, l_hi, l_lo, sched);
        if (l_lo >= 1) {
            const S sd = std::sqrt(reverse_variance(l_hi, l_lo, sched));
            Tensor<S> z = rng.template normal_tensor<S>(frame_shape);
            mean.data += sd * z.data;
        }
        x = std::move(mean);
    }
    x.data = x.data.min(S(1)).max(S(-1));
    return Frame<S>(std::move(x));
}

}  // namespace stdiff

#endif
