#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "focalforge/autodiff/tensor.hpp"

namespace focalforge::ad {

struct GradcheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor: |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Elements probed per tensor; 0 probes every element.
  std::int64_t max_elements = 0;
  std::uint64_t seed = 7;
  // Further steps tried, in order, on an element that fails at eps. Kinks
  // shrink with the step and roundoff shrinks as it grows, so a smooth point
  // with a correct gradient agrees at some scale; a wrong gradient at none.
  std::vector<double> retry_steps;
  // A failing element whose one-sided slopes differ by at least the central
  // error sits on a kink (relu, |x|, clamp) inside [x - eps, x + eps]. Such
  // elements are counted in `nonsmooth` and replaced by another element of
  // the same tensor instead of being scored.
  bool skip_nonsmooth = true;
};

struct GradcheckEntry {
  std::string name;
  std::int64_t checked = 0;
  std::int64_t nonsmooth = 0;
  std::int64_t retried = 0;  // scored at a retry step
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckInput {
  std::string name;
  Var var;  // must require grad
};

// `forward` rebuilds the graph from the current values of the inputs. The
// scalar probed is sum(out * R) for a fixed random R, so every output element
// contributes. Analytic gradients come from one backward pass; numeric ones
// from central differences with step eps. A tensor with elements but none
// scored fails.
GradcheckReport gradcheck(const std::function<Var()>& forward, const std::vector<GradcheckInput>& inputs,
                          const GradcheckOptions& opts = {});

}  // namespace focalforge::ad
