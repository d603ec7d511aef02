#pragma once

#include "nsreg/param.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nsreg {

struct GradCheckResult {
    double max_rel_error = 0.0;
    bool has_gradient_path = true;  // false when analytic and numeric are both ~0
};

/// Central-difference check of analytic gradients.
///
/// `forward` evaluates the scalar loss from the groups' current values and
/// must be deterministic. `backward` runs the analytic forward+backward and
/// leaves gradients in each group's grad field (grads are zeroed first).
inline std::map<std::string, GradCheckResult> grad_check(
    std::vector<ParamGroup*> groups, const std::function<double()>& forward,
    const std::function<void()>& backward, double step = 1e-5) {
    for (auto* g : groups) g->zero_grad();
    backward();
    std::map<std::string, Matrix> analytic;
    for (auto* g : groups) analytic[g->name] = g->grad;

    std::map<std::string, GradCheckResult> report;
    for (auto* g : groups) {
        GradCheckResult res;
        const Matrix& a = analytic[g->name];
        double max_abs_numeric = 0.0;
        for (Eigen::Index i = 0; i < g->value.size(); ++i) {
            const double saved = g->value(i);
            g->value(i) = saved + step;
            const double fp = forward();
            g->value(i) = saved - step;
            const double fm = forward();
            g->value(i) = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            max_abs_numeric = std::max(max_abs_numeric, std::abs(numeric));
            const double denom = std::max({std::abs(a(i)), std::abs(numeric), 1e-8});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(a(i) - numeric) / denom);
        }
        if (a.cwiseAbs().maxCoeff() == 0.0 && max_abs_numeric < 1e-10) {
            res.has_gradient_path = false;
            res.max_rel_error = 0.0;
        }
        report[g->name] = res;
        g->zero_grad();
    }
    return report;
}

}  // namespace nsreg
