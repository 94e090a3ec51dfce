#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mwrdcnn::gradcheck {

// One finite-difference suite. Every checked entry must satisfy
// |analytic - fd| <= atol + rtol * max(|analytic|, |fd|); worst_ratio is the
// largest left side over right side seen, so pass means worst_ratio <= 1.
struct SuiteResult {
  std::string name;
  std::size_t checked = 0;
  double worst_ratio = 0;
  double max_abs_diff = 0;
  double atol = 0;
  double rtol = 0;
  bool pass = false;
};

// Central differences in double precision against the analytic backward
// passes: both convolution directions, ReLU, batch norm, a residual dense
// block, and a full two-level network end to end through the training loss.
std::vector<SuiteResult> run_all(std::uint64_t seed = 1234);

bool all_pass(const std::vector<SuiteResult>& results);

}  // namespace mwrdcnn::gradcheck
