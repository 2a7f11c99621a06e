// Central finite-difference gradient checking (64-bit, step 1e-5), plus the
// battery that sweeps every layer kind and an end-to-end miniature model.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xmid/tensor.hpp"

namespace xmid {

struct GradCheckTarget {
    Tensor<double>* value;          // perturbed in place
    Tensor<double> analytic_grad;   // snapshot taken before perturbation
    std::string name;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "<target>[i]" of the worst element
};

// loss_fn must recompute the full forward pass from the current target
// values. Relative error uses |a-n| / max(|a|,|n|,floor).
GradCheckResult finite_difference_check(const std::function<double()>& loss_fn,
                                        std::vector<GradCheckTarget>& targets,
                                        double step = 1e-5, double floor = 1e-6);

struct BatteryCheck {
    std::string name;
    int instances = 0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct BatteryReport {
    std::vector<BatteryCheck> checks;
    bool all_passed() const {
        for (const auto& c : checks) {
            if (!c.passed) return false;
        }
        return true;
    }
};

// Runs >= 5 random instances per layer kind at tolerance 1e-4 and one
// end-to-end 16x16 miniature model at 1e-3, all in 64-bit.
BatteryReport gradcheck_battery(std::uint64_t seed = 7);

std::string format_battery(const BatteryReport& report);

}  // namespace xmid
