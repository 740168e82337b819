#include "lami/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lami {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = p.trainable ? leaf(p.value) : constant(p.value);
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::logic_error("autodiff: input recorded on a different tape");
    needs = needs || nodes_[static_cast<std::size_t>(in.id())].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("autodiff: backward target must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss, Matrix::Ones(1, 1));
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) {
      // copy: the callback may grow other nodes' grads but never this one
      const Matrix g = n.grad;
      n.backward(g);
    }
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  if (name == "gelu") return Activation::Gelu;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Gelu: return "gelu";
  }
  return "identity";
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

double activate_scalar(double x, Activation act) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh: return std::tanh(x);
    case Activation::Gelu: return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
  return x;
}

double activate_derivative(double x, Activation act) {
  switch (act) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Gelu: {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 1.0;
}

namespace ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("autodiff: operands on different tapes");
}

void require_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul");
  Tape* t = a.tape();
  Matrix out = a.value() * b.value();
  return t->record(std::move(out), {a, b}, [t, a, b](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g * b.value().transpose());
    if (t->needs_grad(b)) t->accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt");
  Tape* t = a.tape();
  Matrix out = a.value() * b.value().transpose();
  return t->record(std::move(out), {a, b}, [t, a, b](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g * b.value());
    if (t->needs_grad(b)) t->accumulate(b, g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape* t = a.tape();
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape* t = a.tape();
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  Tape* t = a.tape();
  Matrix out = a.value().cwiseProduct(b.value());
  return t->record(std::move(out), {a, b}, [t, a, b](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g.cwiseProduct(b.value()));
    if (t->needs_grad(b)) t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  Tape* t = a.tape();
  return t->record(a.value() * s, {a}, [t, a, s](const Matrix& g) { t->accumulate(a, g * s); });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape* t = a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t->record(std::move(out), {a, row}, [t, a, row](const Matrix& g) {
    t->accumulate(a, g);
    if (t->needs_grad(row)) t->accumulate(row, g.colwise().sum());
  });
}

Var activate(const Var& a, Activation act) {
  if (act == Activation::Identity) return a;
  Tape* t = a.tape();
  Matrix out = a.value().unaryExpr([act](double x) { return activate_scalar(x, act); });
  return t->record(std::move(out), {a}, [t, a, act](const Matrix& g) {
    Matrix d = a.value().unaryExpr([act](double x) { return activate_derivative(x, act); });
    t->accumulate(a, g.cwiseProduct(d));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows(), "concat_cols");
  Tape* t = a.tape();
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return t->record(std::move(out), {a, b}, [t, a, b, ca, cb](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g.leftCols(ca));
    if (t->needs_grad(b)) t->accumulate(b, g.rightCols(cb));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_rows of nothing");
  Tape* t = parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return t->record(std::move(out), parts, [t, kept](const Matrix& g) {
    Eigen::Index r0 = 0;
    for (const Var& p : kept) {
      if (t->needs_grad(p)) t->accumulate(p, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
  Tape* t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return t->record(std::move(out), parts, [t, kept](const Matrix& g) {
    Eigen::Index c0 = 0;
    for (const Var& p : kept) {
      if (t->needs_grad(p)) t->accumulate(p, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require_shape(rows * cols == a.value().size(), "reshape");
  Tape* t = a.tape();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return t->record(std::move(out), {a}, [t, a](const Matrix& g) {
    t->accumulate(a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
  });
}

Var spmm(const SparseMatrix& s, const Var& a) {
  require_shape(s.cols() == a.rows(), "spmm");
  Tape* t = a.tape();
  Matrix out = s * a.value();
  return t->record(std::move(out), {a}, [t, a, s](const Matrix& g) {
    t->accumulate(a, s.transpose() * g);
  });
}

Var repeat_rows(const Var& row, Eigen::Index n) {
  require_shape(row.rows() == 1, "repeat_rows");
  Tape* t = row.tape();
  Matrix out = row.value().replicate(n, 1);
  return t->record(std::move(out), {row}, [t, row](const Matrix& g) { t->accumulate(row, g.colwise().sum()); });
}

Var gather_rows(const Var& a, std::vector<int> rows) {
  Tape* t = a.tape();
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require_shape(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return t->record(std::move(out), {a}, [t, a, rows = std::move(rows)](const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    t->accumulate(a, ga);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  require_shape(start >= 0 && start + n <= a.cols(), "slice_cols");
  Tape* t = a.tape();
  Matrix out = a.value().middleCols(start, n);
  return t->record(std::move(out), {a}, [t, a, start, n](const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, n) = g;
    t->accumulate(a, ga);
  });
}

Var transpose(const Var& a) {
  Tape* t = a.tape();
  Matrix out = a.value().transpose();
  return t->record(std::move(out), {a}, [t, a](const Matrix& g) { t->accumulate(a, g.transpose()); });
}

Var sum(const Var& a) {
  Tape* t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t->record(std::move(out), {a}, [t, a](const Matrix& g) {
    t->accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_of_rows(const Var& a) {
  Tape* t = a.tape();
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() * inv;
  return t->record(std::move(out), {a}, [t, a, inv](const Matrix& g) {
    t->accumulate(a, g.replicate(a.rows(), 1) * inv);
  });
}

Var population_variance(const Var& a) {
  Tape* t = a.tape();
  const double n = static_cast<double>(a.value().size());
  const double mean = a.value().sum() / n;
  Matrix centered = a.value().array() - mean;
  Matrix out(1, 1);
  out(0, 0) = centered.squaredNorm() / n;
  return t->record(std::move(out), {a}, [t, a, centered, n](const Matrix& g) {
    t->accumulate(a, centered * (2.0 * g(0, 0) / n));
  });
}

Var row_softmax(const Var& a, const BoolMatrix* mask) {
  if (mask != nullptr) require_shape(mask->rows() == a.rows() && mask->cols() == a.cols(), "row_softmax mask");
  Tape* t = a.tape();
  Matrix p = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (mask == nullptr || (*mask)(i, j)) mx = std::max(mx, a.value()(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (mask == nullptr || (*mask)(i, j)) {
        p(i, j) = std::exp(a.value()(i, j) - mx);
        z += p(i, j);
      }
    }
    p.row(i) /= z;
  }
  Matrix pv = p;
  return t->record(std::move(p), {a}, [t, a, pv](const Matrix& g) {
    // masked entries have p = 0 so they receive no gradient
    Matrix ga(pv.rows(), pv.cols());
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
      const double dot = pv.row(i).dot(g.row(i));
      ga.row(i) = pv.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t->accumulate(a, ga);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_shape(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 && beta.cols() == x.cols(),
                "layer_norm_rows");
  Tape* t = x.tape();
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return t->record(std::move(out), {x, gamma, beta}, [t, x, gamma, beta, xhat, inv_std, d](const Matrix& g) {
    if (t->needs_grad(gamma)) t->accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (t->needs_grad(beta)) t->accumulate(beta, g.colwise().sum());
    if (t->needs_grad(x)) {
      Matrix gx(g.rows(), d);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const RowVector gh = g.row(i).cwiseProduct(gamma.value().row(0));
        const double m1 = gh.mean();
        const double m2 = gh.dot(xhat.row(i)) / static_cast<double>(d);
        gx.row(i) = ((gh.array() - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
      }
      t->accumulate(x, gx);
    }
  });
}

Var standardize_rows(const Var& x, const BoolMatrix& mask, double eps) {
  require_shape(mask.rows() == x.rows() && mask.cols() == x.cols(), "standardize_rows");
  Tape* t = x.tape();
  const Matrix& v = x.value();
  Matrix xhat = Matrix::Zero(v.rows(), v.cols());
  Vector inv_std = Vector::Zero(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double n = static_cast<double>(mask.row(i).count());
    if (n == 0.0) continue;
    double mu = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      if (mask(i, j)) mu += v(i, j);
    mu /= n;
    double var = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      if (mask(i, j)) var += (v(i, j) - mu) * (v(i, j) - mu);
    inv_std(i) = 1.0 / std::sqrt(var / n + eps);
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      if (mask(i, j)) xhat(i, j) = (v(i, j) - mu) * inv_std(i);
  }
  return t->record(xhat, {x}, [t, x, mask, xhat, inv_std](const Matrix& g) {
    Matrix gx = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double n = static_cast<double>(mask.row(i).count());
      if (n == 0.0) continue;
      double m1 = 0.0, m2 = 0.0;
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        if (mask(i, j)) {
          m1 += g(i, j);
          m2 += g(i, j) * xhat(i, j);
        }
      m1 /= n;
      m2 /= n;
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        if (mask(i, j)) gx(i, j) = (g(i, j) - m1 - xhat(i, j) * m2) * inv_std(i);
    }
    t->accumulate(x, gx);
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& rows, const std::vector<int>& targets,
                  const BoolMatrix* allowed) {
  require_shape(rows.size() == targets.size(), "cross_entropy");
  if (allowed != nullptr) require_shape(allowed->rows() == logits.rows() && allowed->cols() == logits.cols(), "cross_entropy mask");
  Tape* t = logits.tape();
  const Matrix& z = logits.value();
  Matrix probs = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), z.cols());
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int r = rows[k];
    const int y = targets[k];
    if (r < 0 || r >= z.rows() || y < 0 || y >= z.cols()) throw std::out_of_range("cross_entropy: target out of range");
    if (allowed != nullptr && !(*allowed)(r, y)) throw std::out_of_range("cross_entropy: target not an allowed class");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (allowed == nullptr || (*allowed)(r, j)) mx = std::max(mx, z(r, j));
    }
    double zsum = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      if (allowed == nullptr || (*allowed)(r, j)) {
        probs(static_cast<Eigen::Index>(k), j) = std::exp(z(r, j) - mx);
        zsum += probs(static_cast<Eigen::Index>(k), j);
      }
    }
    probs.row(static_cast<Eigen::Index>(k)) /= zsum;
    loss += -(z(r, y) - mx - std::log(zsum));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t->record(std::move(out), {logits}, [t, logits, rows, targets, probs](const Matrix& g) {
    Matrix gz = Matrix::Zero(logits.rows(), logits.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      gz.row(rows[k]) += probs.row(static_cast<Eigen::Index>(k)) * g(0, 0);
      gz(rows[k], targets[k]) -= g(0, 0);
    }
    t->accumulate(logits, gz);
  });
}

Var bce_with_logits(const Var& logit, double y) {
  require_shape(logit.rows() == 1 && logit.cols() == 1, "bce_with_logits");
  Tape* t = logit.tape();
  const double z = logit.scalar();
  // log(1 + exp(z)) - y z, evaluated stably
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  Matrix out(1, 1);
  out(0, 0) = softplus - y * z;
  const double p = 1.0 / (1.0 + std::exp(-z));
  return t->record(std::move(out), {logit}, [t, logit, p, y](const Matrix& g) {
    t->accumulate(logit, Matrix::Constant(1, 1, (p - y) * g(0, 0)));
  });
}

Var straight_through(const Matrix& hard, const Var& soft) {
  require_shape(hard.rows() == soft.rows() && hard.cols() == soft.cols(), "straight_through");
  Tape* t = soft.tape();
  return t->record(hard, {soft}, [t, soft](const Matrix& g) { t->accumulate(soft, g); });
}

}  // namespace ad
}  // namespace lami
