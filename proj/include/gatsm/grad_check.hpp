#ifndef GATSM_GRAD_CHECK_HPP
#define GATSM_GRAD_CHECK_HPP

#include <functional>
#include <span>
#include <vector>

namespace gatsm {

/// Scalar function of a flat parameter vector. When `grad` is non-null the
/// callee must fill it with the analytic gradient (resized to point size).
using GradFn = std::function<double(std::span<const double> point, std::vector<double>* grad)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

/// Central finite-difference verification of analytic gradients:
/// max over i of |analytic_i - fd_i| / max(1, |analytic_i|).
/// Throws when the function value is non-finite at any probe point.
GradCheckReport grad_check(const GradFn& fn, std::span<const double> point, double step);

} // namespace gatsm

#endif
