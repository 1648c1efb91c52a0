#pragma once

#include <string>
#include <vector>

namespace fte::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;
};

// Each check compares library output against an independent oracle
// (Eigen's SVD, finite differences, truncated power series, hand-worked
// values) and fails when it runs past its time budget.
CheckResult check_frobenius_svd();
CheckResult check_gradients();
CheckResult check_projections();
CheckResult check_lp_oracle();
CheckResult check_lp_clusters();
CheckResult check_protocol();
// Writes synthetic data and run outputs under workdir.
CheckResult check_end_to_end(const std::string& workdir);
CheckResult check_bsr_effect();
CheckResult check_entropy_effect();
CheckResult check_augmentation();

struct Options {
  bool include_end_to_end = true;
  std::string workdir = "fte_verify_work";
};

std::vector<CheckResult> run_all(const Options& opts);

// "[PASS] 3 projections (0.12s): detail"
std::string format(const CheckResult& r);

}  // namespace fte::verify
