// Central finite-difference oracle: compares tape gradients against
// (f(x+eps*e) - f(x-eps*e)) / (2*eps) per coordinate. This is the
// independent route for every gradient claim in the project.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kgprefix/tape.hpp"

namespace kgprefix {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t worst_input = 0;   // index into the checked input list
    long worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// `build` constructs a scalar loss from leaves created for `inputs`
// (in order, all requiring grad). Relative error uses denominator
// max(|analytic|, |numeric|, 1e-8). Inputs should be f64 for tight
// tolerances.
GradCheckResult finite_difference_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace kgprefix
