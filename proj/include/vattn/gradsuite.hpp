#pragma once

#include <string>
#include <vector>

namespace vattn {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = false;
};

// Central-difference verification of every analytic gradient in the library:
// density loss, the closed-form KL, the separation and determinant
// regularizers, and the full VA / InVA objectives on random micro-instances
// (fixed eps draws and dropout masks).
std::vector<GradCheckEntry> run_gradient_suite(double eps = 1e-5, double threshold = 1e-4);

} // namespace vattn
