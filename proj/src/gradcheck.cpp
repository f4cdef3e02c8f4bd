#include "kgprefix/gradcheck.hpp"

#include <cmath>

namespace kgprefix {

namespace {

double evaluate(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, false));
    const Var loss = build(tape, leaves);
    const double v = tape.value(loss).item();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite loss value");
    return v;
}

}  // namespace

GradCheckResult finite_difference_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const std::vector<Tensor>& inputs, double eps) {
    if (eps <= 0.0) throw NumericError("finite_difference_check: eps must be positive");

    // analytic pass
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    const Var loss = build(tape, leaves);
    if (!std::isfinite(tape.value(loss).item()))
        throw NumericError("finite_difference_check: non-finite loss value");
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (Var v : leaves) analytic.push_back(tape.grad_or_zero(v));

    GradCheckResult result;
    std::vector<Tensor> probe = inputs;
    for (size_t xi = 0; xi < probe.size(); ++xi) {
        for (long c = 0; c < probe[xi].size(); ++c) {
            const double saved = probe[xi].at(c);
            probe[xi].at(c) = saved + eps;
            const double hi = evaluate(build, probe);
            probe[xi].at(c) = saved - eps;
            const double lo = evaluate(build, probe);
            probe[xi].at(c) = saved;
            const double numeric = (hi - lo) / (2.0 * eps);
            const double an = analytic[xi].at(c);
            const double denom = std::max({std::fabs(an), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(an - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_input = xi;
                result.worst_coord = c;
                result.analytic = an;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace kgprefix
