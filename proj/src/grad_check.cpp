#include "poselift/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace poselift {

GradCheckReport grad_check(const std::function<ag::Var()>& loss_fn, const std::vector<Parameter*>& params,
                           double eps, double tol) {
    for (Parameter* p : params) p->zero_grad();
    ag::backward(loss_fn());
    std::vector<Tensor> analytic;
    for (Parameter* p : params) analytic.push_back(p->grad());

    GradCheckReport report;
    ag::NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k]->value();
        GradCheckEntry entry{.name = params[k]->name};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + eps;
            const double up = loss_fn().value().item();
            w[i] = saved - eps;
            const double down = loss_fn().value().item();
            w[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (i == 0 || err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        if (entry.max_rel_error > tol) report.failures.push_back(entry.name);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace poselift
