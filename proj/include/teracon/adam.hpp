#pragma once
// Adam with bias correction, one state per parameter tensor.

#include <cmath>
#include <stdexcept>

#include "teracon/tensor.hpp"

namespace teracon {

struct AdamState {
    DenseArray m;  // first moment
    DenseArray v;  // second moment, elementwise non-negative
    long step{0};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};

    AdamState() = default;
    explicit AdamState(const std::vector<std::size_t>& shape)
        : m(shape), v(shape) {}
};

inline void adam_update(DenseArray& param, const DenseArray& grad, AdamState& state,
                        double lr) {
    if (!param.same_shape(grad))
        throw std::invalid_argument("adam_update: param/grad shape mismatch " +
                                    param.shape_str() + " vs " + grad.shape_str());
    if (state.m.size() == 0) {
        state.m = DenseArray(param.shape);
        state.v = DenseArray(param.shape);
    }
    if (!state.m.same_shape(param))
        throw std::invalid_argument("adam_update: state/param shape mismatch");
    if (lr <= 0.0) throw std::invalid_argument("adam_update: lr must be positive");

    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i];
        state.m.data[i] = b1 * state.m.data[i] + (1.0 - b1) * g;
        state.v.data[i] = b2 * state.v.data[i] + (1.0 - b2) * g * g;
        const double mhat = state.m.data[i] / bc1;
        const double vhat = state.v.data[i] / bc2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

}  // namespace teracon
