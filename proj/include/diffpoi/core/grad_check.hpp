#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "diffpoi/core/tensor.hpp"

namespace diffpoi::core {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    bool finite = true;
    std::size_t failed_index = 0;  // meaningful when !finite
};

// Compares reverse-mode gradients of `fn` at `point` against central
// differences. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                                  double epsilon = 1e-5) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");
    GradCheckResult result;

    Tensor x(point.shape(), point.to_vector(), true);
    Tensor y = fn(x);
    if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    backward(reshape(y, {}));
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());

    auto eval_at = [&](const std::vector<double>& values) {
        return fn(Tensor(point.shape(), values, false)).item();
    };

    std::vector<double> probe = point.to_vector();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe[i];
        double fp = 0.0, fm = 0.0;
        try {
            probe[i] = orig + epsilon;
            fp = eval_at(probe);
            probe[i] = orig - epsilon;
            fm = eval_at(probe);
        } catch (const NumericalError&) {
            fp = std::numeric_limits<double>::quiet_NaN();
        }
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
            result.finite = false;
            result.failed_index = i;
            result.max_relative_error = std::numeric_limits<double>::infinity();
            return result;
        }
        const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        if (err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace diffpoi::core
