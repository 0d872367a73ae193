#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace sngd::acceptance {

/// Outcome of one acceptance criterion run at its pinned protocol.
struct CriterionResult {
  int id = 0;
  std::string name;
  bool gating = true;  // excluded-by-design entries do not gate the exit code
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  std::vector<int> criteria = {1, 2, 3, 4, 5, 6, 7, 8};
  int workers = 0;       // 0 = hardware concurrency
  std::string out_dir;   // when set, figure data files are emitted there
  bool verbose = true;   // stream one line per criterion as it finishes
};

/// Runs the requested criteria at their pinned protocols and tolerances.
std::vector<CriterionResult> run(const Options& options, std::ostream& out);

/// True when every gating criterion passed.
bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace sngd::acceptance
