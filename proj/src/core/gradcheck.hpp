#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gnnbench {

struct GradCheckEntry {
  std::string name;
  int instances = 0;
  double max_err = 0.0;  // worst |backprop - central_fd| / max(1, |fd|, |bp|)
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_passed() const;
  std::string to_string() const;
};

/// Central finite-difference comparison (step 1e-5) for every differentiable
/// op plus the full GCN-2l / GIN-2l models. The reference side uses forward
/// evaluations only; it never touches the tape.
GradCheckReport run_gradcheck(uint64_t seed = 2024, int instances_per_op = 100);

}  // namespace gnnbench
