#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "lami/autodiff.hpp"

namespace lami {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(ParameterRefs params, AdamConfig cfg);

  /// grads[k] pairs with params[k]; frozen parameters are skipped.
  void step(const std::vector<Matrix>& grads);

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

 private:
  ParameterRefs params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

/// Zero-initialised gradient accumulator matching a parameter list.
std::vector<Matrix> zero_grads(const ParameterRefs& params);
/// grads[k] += scale * tape.grad(params[k]).
void accumulate_grads(std::vector<Matrix>& grads, const Tape& tape, const ParameterRefs& params, double scale = 1.0);

/// Worker threads from LAMI_THREADS (default 1).
int thread_count();

/// Runs fn(i) for i in [0, n) on thread_count() threads. Callers keep results
/// per index so reductions stay in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lami
