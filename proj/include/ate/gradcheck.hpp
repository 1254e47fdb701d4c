#pragma once

#include <functional>

#include "ate/tensor.hpp"

namespace ate {

/// Central-difference gradient of a scalar function, 64-bit throughout.
/// Verification oracle; deliberately knows nothing about the tape.
inline Tensor64 finite_difference_gradient(const std::function<double(const Tensor64&)>& f,
                                           const Tensor64& x, double h) {
    if (h <= 0) throw ContractError("finite_difference_gradient: step must be positive");
    Tensor64 grad = Tensor64::zeros(x.shape);
    Tensor64 probe = x;
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        probe[i] = v + h;
        const double fp = f(probe);
        probe[i] = v - h;
        const double fm = f(probe);
        probe[i] = v;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

/// Max relative error between two tensors with an absolute floor for
/// near-zero entries, the comparison the gradient checks use.
inline double max_relative_error(const Tensor64& a, const Tensor64& b, double abs_floor = 1e-7) {
    if (!a.same_shape(b))
        throw DimensionError("max_relative_error: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double worst = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), abs_floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

} // namespace ate
