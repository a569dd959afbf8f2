#pragma once

#include <functional>
#include <string>
#include <vector>

#include "poselift/autograd.hpp"

namespace poselift {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::vector<std::string> failures;  // names of parameters above tolerance
    bool passed() const { return failures.empty(); }
};

// Compares reverse-mode grads of the scalar `loss_fn()` against central
// differences with step `eps`. Error is |analytic - numeric| / max(1, |analytic|).
// `loss_fn` must be deterministic in the parameter values.
GradCheckReport grad_check(const std::function<ag::Var()>& loss_fn, const std::vector<Parameter*>& params,
                           double eps, double tol);

}  // namespace poselift
