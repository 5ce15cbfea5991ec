#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "weaver/model.hpp"

namespace weaver::verify {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Property {
  std::string suite;
  std::string name;
  std::function<PropertyResult(std::uint64_t seed)> run;
};

/// The registered invariant properties, grouped by suite:
/// kron, attention, dictionary, model, data.
const std::vector<Property>& properties();
std::vector<std::string> suite_names();

/// Runs one suite (or "all"). Throws ValueError on an unknown suite name.
std::vector<PropertyResult> run_suite(const std::string& suite, std::uint64_t seed);

/// Full-model reverse-accumulation vs central finite differences at step
/// `fd_step`, compared per parameter tensor by relative L2 error.
struct GradCheckResult {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t parameter_scalars = 0;
};
GradCheckResult model_gradient_check(const model::WeaverConfig& cfg, std::uint64_t seed,
                                     double fd_step = 1e-5, double tol = 1e-4);

/// Desk-scale gradient-check config (P=4, N=6, C=1, E=8, H=2, Q=4).
model::WeaverConfig desk_config(bool use_time_metadata);

}  // namespace weaver::verify
