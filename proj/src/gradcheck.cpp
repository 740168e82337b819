#include "lami/gradcheck.hpp"

#include <cmath>

namespace lami {

GradCheckResult gradient_check(const ParameterRefs& params, const LossBuilder& loss, double epsilon, double floor) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    for (Parameter* p : params) analytic.push_back(tape.grad(*p));
  }

  auto evaluate = [&]() {
    Tape tape;
    return loss(tape).scalar();
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double saved = p.value(r, c);
        p.value(r, c) = saved + epsilon;
        const double plus = evaluate();
        p.value(r, c) = saved - epsilon;
        const double minus = evaluate();
        p.value(r, c) = saved;

        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double a = analytic[k](r, c);
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
        ++result.n_checked;
        result.max_abs_error = std::max(result.max_abs_error, abs_err);
        if (rel > result.max_rel_error || result.worst.empty()) {
          if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst = p.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
          }
        }
      }
    }
  }
  return result;
}

}  // namespace lami
