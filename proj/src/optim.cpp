#include "lami/optim.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <thread>

namespace lami {

Adam::Adam(ParameterRefs params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr > 0.0) || cfg.weight_decay < 0.0) throw std::invalid_argument("adam: invalid learning rate or decay");
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(const std::vector<Matrix>& grads) {
  if (grads.size() != params_.size()) throw std::invalid_argument("adam: gradient count differs from parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.trainable) continue;
    const Matrix g = grads[k] + cfg_.weight_decay * p.value;
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= cfg_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.eps);
  }
}

std::vector<Matrix> zero_grads(const ParameterRefs& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  return out;
}

void accumulate_grads(std::vector<Matrix>& grads, const Tape& tape, const ParameterRefs& params, double scale) {
  for (std::size_t k = 0; k < params.size(); ++k)
    if (tape.has_param(*params[k])) grads[k] += scale * tape.grad(*params[k]);
}

int thread_count() {
  const char* env = std::getenv("LAMI_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace lami
