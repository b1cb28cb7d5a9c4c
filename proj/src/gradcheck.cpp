#include "vattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vattn/errors.hpp"

namespace vattn {

double grad_check(const std::function<double()>& loss,
                  const std::vector<ParamView>& params,
                  double eps) {
    // Snapshot the analytic gradients before probing: the loss closure is
    // allowed to overwrite its gradient buffers on every call.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.emplace_back(p.grad, p.grad + p.size);
    }

    const double base = loss();
    if (!std::isfinite(base)) {
        throw NumericalError("grad_check: objective non-finite at base point");
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        for (std::size_t i = 0; i < p.size; ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + eps;
            const double fp = loss();
            p.value[i] = saved - eps;
            const double fm = loss();
            p.value[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericalError("grad_check: objective non-finite near " + p.name);
            }
            const double cd = (fp - fm) / (2.0 * eps);
            const double rel = std::abs(analytic[pi][i] - cd) / std::max(1e-8, std::abs(cd));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace vattn
