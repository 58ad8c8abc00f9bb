#pragma once
// Shared helpers for the unit suites.

#include <functional>
#include <span>

#include "teracon/gradcheck.hpp"
#include "teracon/graph.hpp"
#include "teracon/rng.hpp"

namespace testutil {

inline teracon::DenseArray random_array(std::vector<std::size_t> shape, teracon::Rng& rng,
                                        double scale = 1.0) {
    teracon::DenseArray a(std::move(shape));
    for (double& v : a.data) v = rng.uniform(-scale, scale);
    return a;
}

// Central-difference check of d(build)/d(p); `build` recreates the scalar
// graph from current parameter values on every call.
inline double grad_check(teracon::ad::Param& p,
                         const std::function<teracon::ad::Node*(teracon::ad::Tape&)>& build,
                         double eps = 1e-5) {
    using teracon::ad::Tape;
    Tape tape;
    teracon::ad::Node* root = build(tape);
    tape.forward(root);
    tape.backward(root);
    const auto grads = tape.param_grads();
    const auto it = grads.find(p.id);
    if (it == grads.end()) return -1.0;  // parameter not reached by the loss
    const std::vector<double> analytic = it->second->data;

    auto f = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), p.value.data.begin());
        Tape t2;
        teracon::ad::Node* r = build(t2);
        return t2.forward(r).data[0];
    };
    const std::vector<double> point = p.value.data;
    const double err = teracon::finite_diff_check(f, point, analytic, eps);
    std::copy(point.begin(), point.end(), p.value.data.begin());
    return err;
}

}  // namespace testutil
