#ifndef STDIFF_SCHEDULE_HPP
#define STDIFF_SCHEDULE_HPP

#include "stdiff/tensor.hpp"

#include <cmath>
#include <vector>

namespace stdiff {

// Discrete forward-noising schedule. Levels are 1-based: beta_at(l) for
// l in [1, L], alpha_bar_at(0) == 1 by convention. The continuous-time
// coefficients gamma(t), sigma^2(t) of the equivalent variance-preserving
// SDE (with beta(t) = L * beta^(ceil(tL)) piecewise constant) are kept for
// reference checks only; sampling is fully discrete.
template <typename S>
struct NoiseSchedule {
    Eigen::Index L = 0;
    std::vector<S> beta;       // [0..L-1] holds levels 1..L
    std::vector<S> alpha;      // 1 - beta
    std::vector<S> alpha_bar;  // running product of alpha

    S beta_at(Eigen::Index l) const {
        check_level(l);
        return beta[static_cast<std::size_t>(l - 1)];
    }
    S alpha_at(Eigen::Index l) const {
        check_level(l);
        return alpha[static_cast<std::size_t>(l - 1)];
    }
    S alpha_bar_at(Eigen::Index l) const {
        if (l == 0) return S(1);
        check_level(l);
        return alpha_bar[static_cast<std::size_t>(l - 1)];
    }

    double gamma_cont(double t) const { return std::exp(-0.5 * beta_integral(t)); }
    double sigma2_cont(double t) const { return 1.0 - std::exp(-beta_integral(t)); }

    void check_level(Eigen::Index l) const {
        if (l < 1 || l > L)
            throw std::invalid_argument("NoiseSchedule: level " + std::to_string(l) +
                                        " outside [1, " + std::to_string(L) + "]");
    }

private:
    double beta_integral(double t) const {
        if (t < 0) throw std::invalid_argument("NoiseSchedule: negative time");
        if (t > 1) t = 1;
        const double scaled = t * static_cast<double>(L);
        const auto full = static_cast<Eigen::Index>(std::floor(scaled));
        double acc = 0;
        for (Eigen::Index i = 0; i < full; ++i) acc += static_cast<double>(beta[static_cast<std::size_t>(i)]);
        const double frac = scaled - static_cast<double>(full);
        if (frac > 0 && full < L) acc += frac * static_cast<double>(beta[static_cast<std::size_t>(full)]);
        return acc;
    }
};

template <typename S>
NoiseSchedule<S> make_linear_schedule(Eigen::Index L, S beta_1, S beta_L) {
    if (L < 2) throw std::invalid_argument("make_linear_schedule: L must be >= 2");
    if (!(S(0) < beta_1 && beta_1 < beta_L && beta_L < S(1)))
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_1 < beta_L < 1");
    NoiseSchedule<S> s;
    s.L = L;
    s.beta.resize(static_cast<std::size_t>(L));
    s.alpha.resize(static_cast<std::size_t>(L));
    s.alpha_bar.resize(static_cast<std::size_t>(L));
    S prod = S(1);
    for (Eigen::Index l = 0; l < L; ++l) {
        const S b = beta_1 + (beta_L - beta_1) * static_cast<S>(l) / static_cast<S>(L - 1);
        s.beta[static_cast<std::size_t>(l)] = b;
        s.alpha[static_cast<std::size_t>(l)] = S(1) - b;
        prod *= S(1) - b;
        s.alpha_bar[static_cast<std::size_t>(l)] = prod;
    }
    return s;
}

}  // namespace stdiff

#endif
