#pragma once

#include <functional>
#include <string>
#include <vector>

namespace vattn {

// One flat view into a parameter block and the analytic gradient computed
// for it at the current parameter values.
struct ParamView {
    std::string name;
    double* value = nullptr;
    const double* grad = nullptr;
    std::size_t size = 0;
};

// Central-difference verification of analytic gradients.
//
// `loss` must recompute the scalar objective at the current parameter values
// (it may also recompute gradients; they are snapshotted up front). Returns
// max over all parameter entries of
//     |analytic - central_difference| / max(1e-8, |central_difference|).
// Throws NumericalError if the objective is non-finite at any probe point.
double grad_check(const std::function<double()>& loss,
                  const std::vector<ParamView>& params,
                  double eps = 1e-5);

} // namespace vattn
