#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "g2s/fusion/fusion.hpp"
#include "g2s/moe/moe.hpp"

namespace g2s {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int probes = 0;
};

/// Finite-difference checks of every differentiable primitive and layer on
/// one random instance drawn from `seed`.
std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed, double eps = 1e-5);

/// Finite differences through fusion -> decoder -> composite loss on a toy
/// model: all keypoint and mel inputs, plus `param_probes` random
/// parameter entries. Routing is recorded once and replayed for every probe.
GradCheckResult full_path_grad_check(std::uint64_t seed, FusionMode mode, bool hierarchical, int param_probes,
                                     double eps = 1e-5);

struct SuiteResult {
  std::string name;
  int passed = 0;
  int failed = 0;
  std::vector<std::string> failures;  // first few, for the report
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  RouterOptions router;  // mutation hook: renormalize = false must fail routing
};

struct VerifySummary {
  std::vector<SuiteResult> suites;
  bool ok() const;
};

// Runs the gradients, routing, metrics and pitch suites.
VerifySummary run_verify(const VerifyOptions& options);

std::string verify_summary_json(const VerifySummary& summary);

}  // namespace g2s
