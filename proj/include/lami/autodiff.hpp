#pragma once

// Reverse-mode automatic differentiation over dense double-precision matrices.
//
// A Tape records every operation of one forward pass. Calling backward() on a
// 1x1 result walks the records in reverse and leaves gradients on the leaves.
// Parameters that are not trainable are recorded as constants, so they never
// receive a gradient.

#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

#include "lami/tensor.hpp"

namespace lami {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class Tape;

/// Handle to a recorded value. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A leaf whose gradient is retained (inputs under test, jacobians).
  Var leaf(Matrix value);
  /// Records a parameter once per tape; later calls return the same leaf.
  Var param(Parameter& p);

  /// Records a derived value. `backward` runs only if some input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  void backward(const Var& loss);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id())].needs_grad; }

  /// Gradient of the last backward() target w.r.t. `v`; zeros if none flowed.
  Matrix grad(const Var& v) const;
  /// Gradient w.r.t. a parameter; zeros when it was frozen or unused.
  Matrix grad(const Parameter& p) const;
  bool has_param(const Parameter& p) const { return param_nodes_.count(&p) != 0; }

  void accumulate(const Var& v, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

enum class Activation { Identity, Relu, Sigmoid, Tanh, Gelu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

namespace ad {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
Var activate(const Var& a, Activation act);
Var concat_cols(const Var& a, const Var& b);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Row-major reshape; the element count is preserved.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
/// Constant sparse matrix times a.
Var spmm(const SparseMatrix& s, const Var& a);
Var repeat_rows(const Var& row, Eigen::Index n);
Var gather_rows(const Var& a, std::vector<int> rows);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var transpose(const Var& a);
Var sum(const Var& a);
/// Mean of the rows: (1/R) * sum_k a[k, :], a 1xC row.
Var mean_of_rows(const Var& a);
/// Population variance of all entries of a (as one sample).
Var population_variance(const Var& a);
/// Row-wise softmax. Entries where mask is false get probability 0.
Var row_softmax(const Var& a, const BoolMatrix* mask = nullptr);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Per row, (x - mean) / sqrt(var + eps) over the entries where mask is true;
/// other entries are 0. Rows with no true entry stay 0.
Var standardize_rows(const Var& x, const BoolMatrix& mask, double eps = 1e-6);
/// Sum over selected rows of -log softmax(logits[row])[target]. When `allowed`
/// is given, the softmax runs over allowed columns only.
Var cross_entropy(const Var& logits, const std::vector<int>& rows, const std::vector<int>& targets,
                  const BoolMatrix* allowed = nullptr);
/// Binary cross-entropy of a 1x1 logit against y in {0, 1}.
Var bce_with_logits(const Var& logit, double y);
/// Forward value `hard`; gradient passes unchanged to `soft`.
Var straight_through(const Matrix& hard, const Var& soft);

}  // namespace ad

double activate_scalar(double x, Activation act);
double activate_derivative(double x, Activation act);

}  // namespace lami
