#ifndef STDIFF_MOTION_SDE_HPP
#define STDIFF_MOTION_SDE_HPP

#include "stdiff/autodiff.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/params.hpp"
#include "stdiff/random.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace stdiff {

enum class SdeMethod { euler_heun, euler_maruyama };
enum class SdeCalculus { stratonovich, ito };

// Solver configuration. Noise is diagonal: one independent Wiener component
// per state element, sigma acting elementwise.
struct SdeSolverConfig {
    SdeMethod method = SdeMethod::euler_heun;
    SdeCalculus calculus = SdeCalculus::stratonovich;
    double dt = 0.1;

    void validate() const {
        if (!(dt > 0)) throw std::invalid_argument("SdeSolverConfig: dt must be positive");
        const bool heun_strat =
            method == SdeMethod::euler_heun && calculus == SdeCalculus::stratonovich;
        const bool em_ito = method == SdeMethod::euler_maruyama && calculus == SdeCalculus::ito;
        if (!heun_strat && !em_ito)
            throw std::invalid_argument(
                "SdeSolverConfig: supported pairs are euler_heun/stratonovich and "
                "euler_maruyama/ito");
    }
};

template <typename S>
struct WienerIncrement {
    Tensor<S> dw;  // N(0, h I), elementwise
    double h = 0;
};

template <typename S>
WienerIncrement<S> sample_wiener(const Shape& shape, double h, Rng& rng) {
    WienerIncrement<S> w;
    w.h = h;
    w.dw = rng.template normal_tensor<S>(shape);
    w.dw.data *= static_cast<S>(std::sqrt(h));
    return w;
}

// substep plan: n = ceil((t1-t0)/dt) steps of dt, the last one shortened to
// land exactly on t1 (1e-9 slack absorbs float dust in the ratio).
inline std::vector<double> substep_sizes(double t0, double t1, double dt) {
    if (!(t1 > t0))
        throw std::invalid_argument("integrate: t1 must exceed t0, got [" + std::to_string(t0) +
                                    ", " + std::to_string(t1) + "]");
    const double span = t1 - t0;
    const auto n = static_cast<Eigen::Index>(std::max(1.0, std::ceil(span / dt - 1e-9)));
    std::vector<double> h(static_cast<std::size_t>(n), dt);
    h.back() = t1 - (t0 + static_cast<double>(n - 1) * dt);
    return h;
}

namespace detail {

// State adapters shared by the plain-tensor and autodiff instantiations.
template <typename S>
const Tensor<S>& state_value(const Tensor<S>& t) { return t; }
template <typename S>
const Tensor<S>& state_value(const ad::Var<S>& v) { return v.value(); }

template <typename S>
Tensor<S> lin_step(const Tensor<S>& m, const Tensor<S>& mu, S h) {
    return Tensor<S>(m.shape, m.data + h * mu.data);
}
template <typename S>
ad::Var<S> lin_step(ad::Var<S> m, ad::Var<S> mu, S h) {
    return ad::add(m, ad::scale(mu, h));
}

template <typename S>
Tensor<S> add_scaled_noise(const Tensor<S>& x, const Tensor<S>& sigma, const Tensor<S>& dw, S c) {
    return Tensor<S>(x.shape, x.data + c * sigma.data * dw.data);
}
template <typename S>
ad::Var<S> add_scaled_noise(ad::Var<S> x, ad::Var<S> sigma, const Tensor<S>& dw, S c) {
    return ad::add(x, ad::scale(ad::mul_const(sigma, dw), c));
}

}  // namespace detail

// Stochastic integration of dm = mu(m) dt + sigma(m) dW over (t0, t1].
// State is either Tensor<S> (plain evaluation, Monte Carlo oracles) or
// ad::Var<S> (training; gradients flow through the unrolled solver). f maps
// state -> (mu, sigma); one Wiener increment is drawn per substep.
template <typename S, typename State, typename F>
State sde_integrate(F&& f, State m, double t0, double t1, const SdeSolverConfig& config,
                    Rng& rng) {
    config.validate();
    const std::vector<double> hs = substep_sizes(t0, t1, config.dt);
    const Shape shape = detail::state_value<S>(m).shape;
    for (std::size_t k = 0; k < hs.size(); ++k) {
        const S h = static_cast<S>(hs[k]);
        const WienerIncrement<S> w = sample_wiener<S>(shape, hs[k], rng);
        auto [mu, sigma] = f(m);
        State base = detail::lin_step<S>(m, mu, h);
        if (config.method == SdeMethod::euler_maruyama) {
            m = detail::add_scaled_noise<S>(base, sigma, w.dw, S(1));
        } else {
            // Euler-Heun (Stratonovich): predictor with sigma(m), corrector
            // averaging sigma at both endpoints against the same increment.
            State pred = detail::add_scaled_noise<S>(base, sigma, w.dw, S(1));
            auto [mu2, sigma2] = f(pred);
            (void)mu2;
            State half = detail::add_scaled_noise<S>(base, sigma, w.dw, S(0.5));
            m = detail::add_scaled_noise<S>(half, sigma2, w.dw, S(0.5));
        }
        if (!detail::state_value<S>(m).all_finite())
            throw NumericError("sde_integrate: non-finite state at substep " + std::to_string(k) +
                               " of " + std::to_string(hs.size()));
    }
    return m;
}

// Deterministic forward-Euler integration of dm = mu(m) dt with the same
// substep policy; f may be the full drift/diffusion net (sigma is ignored).
template <typename S, typename State, typename F>
State ode_integrate(F&& f, State m, double t0, double t1, double dt) {
    if (!(dt > 0)) throw std::invalid_argument("ode_integrate: dt must be positive");
    const std::vector<double> hs = substep_sizes(t0, t1, dt);
    for (std::size_t k = 0; k < hs.size(); ++k) {
        auto [mu, sigma] = f(m);
        (void)sigma;
        m = detail::lin_step<S>(m, mu, static_cast<S>(hs[k]));
        if (!detail::state_value<S>(m).all_finite())
            throw NumericError("ode_integrate: non-finite state at substep " + std::to_string(k) +
                               " of " + std::to_string(hs.size()));
    }
    return m;
}

// Drift/diffusion network f_theta: small U-shaped conv trunk over the motion
// state with two conv heads. mu is unconstrained, sigma passes through
// softplus; both are time-homogeneous. Down/up stages are clamped to the
// halvings the state's spatial dims admit (a 2x2 state supports one).
struct DriftDiffusionConfig {
    Eigen::Index motion_channels = 64;
    Eigen::Index width = 64;
    Eigen::Index motion_height = 2;
    Eigen::Index motion_width = 2;

    int down_stages() const {
        int n = 0;
        Eigen::Index h = motion_height, w = motion_width;
        while (n < 2 && h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2) {
            h /= 2;
            w /= 2;
            ++n;
        }
        return n;
    }
};

template <typename S>
void declare_drift_diffusion(ParamRegistry<S>& reg, const DriftDiffusionConfig& cfg) {
    const Eigen::Index w = cfg.width, cm = cfg.motion_channels;
    reg.declare("sde.stem.w", Shape{w, cm, 3, 3}, Init::kaiming);
    reg.declare("sde.stem.b", Shape{w}, Init::zeros);
    for (int i = 0; i < cfg.down_stages(); ++i) {
        reg.declare("sde.down" + std::to_string(i) + ".w", Shape{w, w, 3, 3}, Init::kaiming);
        reg.declare("sde.down" + std::to_string(i) + ".b", Shape{w}, Init::zeros);
        reg.declare("sde.up" + std::to_string(i) + ".w", Shape{w, w, 3, 3}, Init::kaiming);
        reg.declare("sde.up" + std::to_string(i) + ".b", Shape{w}, Init::zeros);
    }
    reg.declare("sde.mid.w", Shape{w, w, 3, 3}, Init::kaiming);
    reg.declare("sde.mid.b", Shape{w}, Init::zeros);
    // zero-initialized heads: mu = 0 and sigma = softplus(0) at start
    reg.declare("sde.mu.w", Shape{cm, w, 3, 3}, Init::zeros);
    reg.declare("sde.mu.b", Shape{cm}, Init::zeros);
    reg.declare("sde.sigma.w", Shape{cm, w, 3, 3}, Init::zeros);
    reg.declare("sde.sigma.b", Shape{cm}, Init::zeros);
}

template <typename S>
std::pair<ad::Var<S>, ad::Var<S>> drift_diffusion(BoundParams<S>& p,
                                                  const DriftDiffusionConfig& cfg, ad::Var<S> m) {
    const Shape want = Shape::chw(cfg.motion_channels, cfg.motion_height, cfg.motion_width);
    if (m.shape() != want)
        throw std::invalid_argument("drift_diffusion: state shape " + m.shape().str() +
                                    ", configured " + want.str());
    const kernels::ConvSpec c1{3, 3, 1, 1};
    const kernels::ConvSpec c2{3, 3, 2, 1};
    const int downs = cfg.down_stages();

    ad::Var<S> h = ad::silu(ad::conv2d(m, p("sde.stem.w"), p("sde.stem.b"), c1));
    std::vector<ad::Var<S>> skips;
    for (int i = 0; i < downs; ++i) {
        skips.push_back(h);
        h = ad::silu(ad::conv2d(h, p("sde.down" + std::to_string(i) + ".w"),
                                p("sde.down" + std::to_string(i) + ".b"), c2));
    }
    h = ad::silu(ad::conv2d(h, p("sde.mid.w"), p("sde.mid.b"), c1));
    for (int i = downs - 1; i >= 0; --i) {
        h = ad::nearest_upsample2(h);
        h = ad::silu(ad::conv2d(h, p("sde.up" + std::to_string(i) + ".w"),
                                p("sde.up" + std::to_string(i) + ".b"), c1));
        h = ad::add(h, skips[static_cast<std::size_t>(i)]);
    }
    ad::Var<S> mu = ad::conv2d(h, p("sde.mu.w"), p("sde.mu.b"), c1);
    ad::Var<S> sigma = ad::softplus(ad::conv2d(h, p("sde.sigma.w"), p("sde.sigma.b"), c1));
    return {mu, sigma};
}

template <typename S>
ad::Var<S> sde_integrate_net(BoundParams<S>& p, const DriftDiffusionConfig& cfg, ad::Var<S> m0,
                             double t0, double t1, const SdeSolverConfig& solver, Rng& rng) {
    auto f = [&](ad::Var<S> m) { return drift_diffusion(p, cfg, m); };
    return sde_integrate<S>(f, m0, t0, t1, solver, rng);
}

template <typename S>
ad::Var<S> ode_integrate_net(BoundParams<S>& p, const DriftDiffusionConfig& cfg, ad::Var<S> m0,
                             double t0, double t1, double dt) {
    auto f = [&](ad::Var<S> m) { return drift_diffusion(p, cfg, m); };
    return ode_integrate<S>(f, m0, t0, t1, dt);
}

}  // namespace stdiff

#endif
