#pragma once

// Central finite-difference validation of the recorded-tape gradients.

#include <cmath>
#include <functional>
#include <vector>

#include "viewco/tensor.hpp"

namespace viewco {

// f rebuilds its graph from the current contents of params on every call.
// Returns max over parameter elements of
//   |analytic - central difference| / max(1, |central difference|).
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         double step = 1e-5) {
    for (auto& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    Tensor loss = f();
    if (!std::isfinite(loss.value())) throw NonFiniteObjective("grad_check: objective not finite");
    backward(loss);

    double worst = 0.0;
    for (auto& p : params) {
        const size_t n = p.numel();
        for (size_t i = 0; i < n; ++i) {
            const double keep = (*p.data)[i];
            (*p.data)[i] = keep + step;
            double fp = f().value();
            (*p.data)[i] = keep - step;
            double fm = f().value();
            (*p.data)[i] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NonFiniteObjective("grad_check: perturbed objective not finite");
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = (*p.grad)[i];
            double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace viewco
