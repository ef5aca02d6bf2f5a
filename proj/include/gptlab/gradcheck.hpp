// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gptlab/tensor.hpp"

namespace gptlab {

// One parameter tensor under test: `value` is perturbed in place, `grad` is
// the reverse-mode gradient of the checked scalar with respect to `value`.
struct GradCheckItem {
    Tensor* value = nullptr;
    const Tensor* grad = nullptr;
    std::string name;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
};

// Central finite differences against reverse-mode gradients.
// rel err = |analytic - numeric| / max(1e-6, |analytic|, |numeric|).
inline GradCheckResult grad_check(const std::function<double()>& f,
                                  const std::vector<GradCheckItem>& items, double eps) {
    GradCheckResult result;
    for (const auto& item : items) {
        Tensor& value = *item.value;
        const Tensor& grad = *item.grad;
        if (!value.same_shape(grad)) throw DimensionError("grad_check: grad shape mismatch");
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const double saved = value[i];
            value[i] = saved + eps;
            const double f_plus = f();
            value[i] = saved - eps;
            const double f_minus = f();
            value[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
                throw NumericError("grad_check: non-finite objective at '" + item.name + "'");
            }
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double analytic = grad[i];
            const double denom =
                std::max({1e-6, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = item.name;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace gptlab
