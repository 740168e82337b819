#pragma once

// Central finite-difference verification of tape gradients.

#include <functional>
#include <string>

#include "lami/autodiff.hpp"

namespace lami {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "name[row,col]" of the worst entry
  std::size_t n_checked = 0;
};

/// Builds a scalar loss on a fresh tape; parameters must enter via tape.param().
using LossBuilder = std::function<Var(Tape&)>;

/// |a - n| / max(|a|, |n|, floor) over every entry of every trainable parameter.
GradCheckResult gradient_check(const ParameterRefs& params, const LossBuilder& loss, double epsilon = 1e-5,
                               double floor = 1e-4);

}  // namespace lami
