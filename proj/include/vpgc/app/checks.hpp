#pragma once

#include <set>
#include <string>
#include <vector>

namespace vpgc::app {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Names of deliberately broken computations, used to prove that a check can
/// fail. Only "kl_continuous" (sign flip) is recognized.
struct CheckOptions {
  std::set<std::string> faults;
};

// Invariant checks shared by `vpgc selfcheck` and the acceptance binary.
// Each runs in seconds and is deterministic.

/// Importance weights of eps (3,2,1) at theta 1 and 3.
CheckResult check_worked_example();
/// Hue lifting and group convolutions, m in {3, 6}, all-ones weights, 32-bit.
CheckResult check_hue_equivariance();
/// Rotation lifting and group convolutions on an 8-grid with smooth inputs.
CheckResult check_rotation_equivariance();
/// Finite differences for every differentiable primitive (64-bit).
CheckResult check_primitive_gradients();
/// Finite differences for a one-sample ELBO of a two-layer rotation model.
CheckResult check_elbo_gradient();
CheckResult check_kl_continuous(const CheckOptions& options = {});
CheckResult check_kl_discrete();
/// Rotation and hue group axioms.
CheckResult check_group_axioms();
/// Measured hue convolution error against its Cauchy-Schwarz bound under
/// weight perturbations of size 0, 0.01 and 0.1.
CheckResult check_equivariance_bound(int trials = 100);
/// Three-layer hue network: all-ones mask equals the full network, (1,0,0) breaks invariance.
CheckResult check_forced_masks();

/// Fast suite run by `vpgc selfcheck`, in a fixed order.
std::vector<CheckResult> selfcheck(const CheckOptions& options = {});

}  // namespace vpgc::app
