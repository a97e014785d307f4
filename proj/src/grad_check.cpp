#include "gatsm/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gatsm {

GradCheckReport grad_check(const GradFn& fn, std::span<const double> point, double step) {
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> analytic;
    const double f0 = fn(x, &analytic);
    if (!std::isfinite(f0)) {
        throw std::runtime_error("grad_check: non-finite function value at the base point");
    }
    if (analytic.size() != x.size()) {
        throw std::runtime_error("grad_check: analytic gradient size " +
                                 std::to_string(analytic.size()) + " != point size " +
                                 std::to_string(x.size()));
    }

    GradCheckReport report;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = fn(x, nullptr);
        x[i] = saved - step;
        const double fm = fn(x, nullptr);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("grad_check: non-finite function value at probe " +
                                     std::to_string(i));
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = fd;
        }
    }
    return report;
}

} // namespace gatsm
