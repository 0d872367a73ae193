// Acceptance suite: runs the pinned experiment protocols and prints one
// pass/fail line per criterion. Arguments select a subset, e.g.
//   acceptance 1 4 5 7

#include <cstdlib>
#include <iostream>

#include "sngd/acceptance.hpp"

int main(int argc, char** argv) {
  sngd::acceptance::Options options;
  if (argc > 1) {
    options.criteria.clear();
    for (int i = 1; i < argc; ++i) options.criteria.push_back(std::atoi(argv[i]));
  }
  const auto results = sngd::acceptance::run(options, std::cout);
  return sngd::acceptance::all_passed(results) ? 0 : 1;
}
