#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "switchaux/tensor.hpp"

namespace swaux {

/// Central-difference gradient of a scalar function with respect to the
/// values of `params`. The tensor is perturbed in place and restored.
inline std::vector<double> finite_diff_grad(const std::function<double()>& f, Tensor& params, double eps = 1e-5) {
    auto vals = params.mutable_values();
    std::vector<double> grad(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + eps;
        const double up = f();
        vals[i] = orig - eps;
        const double down = f();
        vals[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// Same as above for a function of a plain coordinate vector.
inline std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double eps = 1e-5) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        const double up = f(x);
        x[i] = orig - eps;
        const double down = f(x);
        x[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// Relative error |a-b| / max(|a|, |b|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

}  // namespace swaux
