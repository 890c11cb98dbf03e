// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"

#include <string>
#include <vector>

namespace p2l {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

/// Adjoint dot tests, finite-difference gradient checks, dense CG oracles and
/// the autoencoder fixed-point analysis, on small seeded instances.
[[nodiscard]] std::vector<CheckResult> run_property_checks(Seed seed = 0);

}  // namespace p2l
