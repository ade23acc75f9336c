#pragma once

#include <string>
#include <vector>

namespace unirgbir::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Central-difference verification of every differentiable building block
/// (64-bit): linear, MFP fuse, pyramid, both SFI attention kinds, the gate,
/// and the segmentation loss. Tolerance 1e-3 relative.
std::vector<CheckResult> run_grad_suite();

/// Dual-route equivalence: production ops vs the brute-force references,
/// plus the hand-stepped optimizer trace, hand-computed loss values, and
/// randomized metric comparisons.
std::vector<CheckResult> run_oracle_suite(int attention_trials = 100);

/// Structural contracts: round trips, normalization statistics, attention
/// weight normalization, gate convexity, zero-init equivalence.
std::vector<CheckResult> run_invariant_suite(int convexity_trials = 200);

bool all_pass(const std::vector<CheckResult>& results);
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace unirgbir::checks
