#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace agl {

struct GradSuiteEntry {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::string worst_path;

  bool passed() const noexcept { return max_rel_error <= tolerance; }
};

// Central-difference checks of every differentiable op and loss in double
// precision on fixed seeded inputs. Linear and quadratic compositions use the
// tighter tolerance.
std::vector<GradSuiteEntry> run_grad_suite();

}  // namespace agl
