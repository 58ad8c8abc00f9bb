#pragma once
// Central-difference verification of analytic gradients.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace teracon {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// `f` is re-evaluated at perturbed copies of `point`; it must not keep state
// between calls.
inline double finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> point,
                                std::span<const double> analytic, double eps) {
    if (eps < 1e-7 || eps > 1e-3)
        throw std::invalid_argument("finite_diff_check: eps outside [1e-7, 1e-3]");
    if (point.size() != analytic.size())
        throw std::invalid_argument("finite_diff_check: point/gradient size mismatch");
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + eps;
        const double up = f(x);
        x[i] = saved - eps;
        const double down = f(x);
        x[i] = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace teracon
