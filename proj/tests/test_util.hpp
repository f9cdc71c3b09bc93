#ifndef STDIFF_TEST_UTIL_HPP
#define STDIFF_TEST_UTIL_HPP

#include "stdiff/random.hpp"
#include "stdiff/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>

#include "doctest.h"

namespace stdiff::testutil {

template <typename S>
Tensor<S> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<S> t(std::move(s));
    for (Eigen::Index i = 0; i < t.numel(); ++i)
        t.data[i] = static_cast<S>(lo + (hi - lo) * rng.uniform());
    return t;
}

// Central-difference check of an analytic gradient. loss_of must be a pure
// function of the varied tensor (all other randomness frozen by the caller).
template <typename S>
void check_gradient(const Tensor<S>& x0, const std::function<double(const Tensor<S>&)>& loss_of,
                    const Tensor<S>& analytic, double eps, double rtol, double atol,
                    Eigen::Index max_coords = -1, Rng* coord_rng = nullptr) {
    REQUIRE(analytic.shape == x0.shape);
    std::vector<Eigen::Index> coords;
    if (max_coords < 0 || max_coords >= x0.numel()) {
        coords.resize(static_cast<std::size_t>(x0.numel()));
        for (Eigen::Index i = 0; i < x0.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
        REQUIRE(coord_rng != nullptr);
        for (Eigen::Index k = 0; k < max_coords; ++k)
            coords.push_back(static_cast<Eigen::Index>(
                coord_rng->uniform_int(0, static_cast<std::uint64_t>(x0.numel() - 1))));
    }
    for (Eigen::Index i : coords) {
        Tensor<S> xp = x0, xm = x0;
        xp.data[i] += static_cast<S>(eps);
        xm.data[i] -= static_cast<S>(eps);
        const double fd = (loss_of(xp) - loss_of(xm)) / (2.0 * eps);
        const double ad = static_cast<double>(analytic.data[i]);
        const double tol = atol + rtol * std::max(std::abs(fd), std::abs(ad));
        INFO("coord ", i, ": analytic=", ad, " fd=", fd);
        CHECK(std::abs(ad - fd) <= tol);
    }
}

}  // namespace stdiff::testutil

#endif
