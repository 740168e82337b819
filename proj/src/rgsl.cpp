#include "lami/rgsl.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace lami {

Matrix score_pairs(const Matrix& Hq, const Matrix& Wa) {
  if (Hq.cols() != Wa.cols()) throw std::invalid_argument("rgsl: H_q and W_a dimensions differ");
  const Matrix Z = Hq * Wa.transpose();
  return Z * Z.transpose();
}

BoolMatrix topic_mask(const std::vector<int>& topic_of_question) {
  const auto q = static_cast<Eigen::Index>(topic_of_question.size());
  BoolMatrix m(q, q);
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index j = 0; j < q; ++j)
      m(i, j) = i != j && topic_of_question[static_cast<std::size_t>(i)] != topic_of_question[static_cast<std::size_t>(j)];
  return m;
}

Matrix topk_adjacency(const Matrix& S, int k, const BoolMatrix& mask) {
  if (S.rows() != S.cols() || mask.rows() != S.rows() || mask.cols() != S.cols())
    throw std::invalid_argument("rgsl: score matrix and mask must be square and equal-sized");
  if (k < 1) throw std::invalid_argument("rgsl: k_sim must be positive");
  Matrix A = Matrix::Zero(S.rows(), S.cols());
  std::vector<Eigen::Index> cand;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    cand.clear();
    for (Eigen::Index j = 0; j < S.cols(); ++j)
      if (j != i && mask(i, j)) cand.push_back(j);
    if (static_cast<int>(cand.size()) < k)
      throw std::invalid_argument("rgsl: row " + std::to_string(i) + " has " + std::to_string(cand.size()) +
                                  " eligible neighbours, k_sim is " + std::to_string(k));
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), [&](Eigen::Index a, Eigen::Index b) {
      if (S(i, a) != S(i, b)) return S(i, a) > S(i, b);
      return a < b;
    });
    for (int t = 0; t < k; ++t) A(i, cand[static_cast<std::size_t>(t)]) = 1.0;
  }
  return A;
}

Matrix row_normalize(const Matrix& A) {
  Matrix out = A;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double s = A.row(i).sum();
    if (s == 0.0) throw std::invalid_argument("rgsl: row " + std::to_string(i) + " has zero degree");
    out.row(i) /= s;
  }
  return out;
}

Var degree_variance_penalty(const Var& P, double lambda) {
  Tape* t = P.tape();
  Var ones = t->constant(Matrix::Ones(1, P.rows()));
  return ad::scale(ad::population_variance(ad::matmul(ones, P)), lambda);
}

double degree_variance(const Matrix& P) {
  const RowVector c = P.colwise().sum();
  return (c.array() - c.mean()).square().mean();
}

Vector rowmean(const Matrix& W, RowmeanAxis axis) {
  if (axis == RowmeanAxis::Rows) return W.colwise().mean().transpose();
  return W.rowwise().mean();
}

Vector relation_vector(const Vector& h_i, const Vector& h_j, const Matrix& W_r, const Matrix& W_rel, Activation act,
                       RowmeanAxis axis, bool use_relation_matrix) {
  const Eigen::Index d = h_i.size();
  if (h_j.size() != d || W_rel.rows() != d || W_rel.cols() != 2 * d)
    throw std::invalid_argument("rgsl: relation_vector dimension mismatch");
  Vector left = h_i;
  if (use_relation_matrix) {
    const Vector m = rowmean(W_r, axis);
    if (m.size() != d) throw std::invalid_argument("rgsl: relation matrix does not match d");
    left += m;
  }
  Vector x(2 * d);
  x << left, h_j;
  const Vector z = W_rel * x;
  return z.unaryExpr([act](double v) { return activate_scalar(v, act); });
}

Var relation_aggregate(const Var& A_hat, std::span<const Var> a_groups, const std::vector<int>& group_of_source,
                       const Var& B, const Var& H, Activation act) {
  const Eigen::Index q = H.rows();
  const Eigen::Index d = H.cols();
  if (A_hat.rows() != q || A_hat.cols() != q || B.rows() != q || B.cols() != d ||
      static_cast<Eigen::Index>(group_of_source.size()) != q)
    throw std::invalid_argument("rgsl: relation_aggregate shape mismatch");
  for (const Var& a : a_groups)
    if (a.rows() != q || a.cols() != d) throw std::invalid_argument("rgsl: relation_aggregate group shape mismatch");
  for (int g : group_of_source)
    if (g < 0 || g >= static_cast<int>(a_groups.size())) throw std::out_of_range("rgsl: source group out of range");

  Tape* t = H.tape();
  const Matrix& Ah = A_hat.value();
  const Matrix& Bv = B.value();
  const Matrix& Hv = H.value();
  Matrix out = Matrix::Zero(q, d);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) {
      const double w = Ah(i, j);
      if (w == 0.0) continue;
      const Matrix& a = a_groups[static_cast<std::size_t>(group_of_source[static_cast<std::size_t>(j)])].value();
      for (Eigen::Index k = 0; k < d; ++k) out(i, k) += w * activate_scalar(a(i, k) + Bv(j, k), act) * Hv(j, k);
    }
  }

  std::vector<Var> inputs{A_hat, B, H};
  inputs.insert(inputs.end(), a_groups.begin(), a_groups.end());
  std::vector<Var> groups(a_groups.begin(), a_groups.end());
  return t->record(std::move(out), inputs, [t, A_hat, B, H, groups, group_of_source, act, q, d](const Matrix& G) {
    const Matrix& Ah = A_hat.value();
    const Matrix& Bv = B.value();
    const Matrix& Hv = H.value();
    Matrix gA = Matrix::Zero(q, q);
    Matrix gB = Matrix::Zero(q, d);
    Matrix gH = Matrix::Zero(q, d);
    std::vector<Matrix> gG(groups.size(), Matrix::Zero(q, d));
    const bool need_a = t->needs_grad(A_hat);
    for (Eigen::Index i = 0; i < q; ++i) {
      for (Eigen::Index j = 0; j < q; ++j) {
        const double w = Ah(i, j);
        if (w == 0.0 && !need_a) continue;
        const auto g = static_cast<std::size_t>(group_of_source[static_cast<std::size_t>(j)]);
        const Matrix& a = groups[g].value();
        double ga = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
          const double z = a(i, k) + Bv(j, k);
          const double s = activate_scalar(z, act);
          ga += G(i, k) * s * Hv(j, k);
          if (w != 0.0) {
            gH(j, k) += w * G(i, k) * s;
            const double dz = w * G(i, k) * Hv(j, k) * activate_derivative(z, act);
            gG[g](i, k) += dz;
            gB(j, k) += dz;
          }
        }
        gA(i, j) = ga;
      }
    }
    t->accumulate(A_hat, gA);
    t->accumulate(B, gB);
    t->accumulate(H, gH);
    for (std::size_t g = 0; g < groups.size(); ++g) t->accumulate(groups[g], gG[g]);
  });
}

RgslLayer::RgslLayer(const std::string& name, Eigen::Index d, int n_answer_relations, const RgslConfig& cfg, Rng& rng)
    : cfg_(cfg), d_(d), n_answer_(n_answer_relations) {
  if (cfg.k_sim < 1) throw std::invalid_argument("rgsl: k_sim must be positive");
  if (cfg.lambda_deg < 0.0) throw std::invalid_argument("rgsl: lambda_deg must be non-negative");
  Wa = Parameter{name + ".Wa", glorot(d, d, rng), true};
  Ws = Parameter{name + ".Ws", glorot(d, d, rng), true};
  const int n_rel = cfg.shared_relation_matrix ? 1 : n_answer_relations + 1;
  for (int r = 0; r < n_rel; ++r) Wrel.push_back(Parameter{name + ".Wrel" + std::to_string(r), glorot(d, 2 * d, rng), true});
}

ParameterRefs RgslLayer::parameters() {
  ParameterRefs out{&Wa, &Ws};
  for (auto& p : Wrel) out.push_back(&p);
  return out;
}

RgslLayer::Output RgslLayer::forward(Tape& tape, const Var& Hq, const std::vector<int>& topic_of_question,
                                     const std::vector<std::optional<int>>& source_relation, RgcnLayer& rgcn,
                                     StructureMode mode) {
  const Eigen::Index q = Hq.rows();
  if (Hq.cols() != d_) throw std::invalid_argument("rgsl: H_q has wrong width");
  if (q < 2) throw std::invalid_argument("rgsl: need at least two questions");
  if (static_cast<Eigen::Index>(topic_of_question.size()) != q || static_cast<Eigen::Index>(source_relation.size()) != q)
    throw std::invalid_argument("rgsl: per-question inputs do not match H_q");

  Output out;
  Var Z = ad::matmul_nt(Hq, tape.param(Wa));
  Var S = ad::matmul_nt(Z, Z);
  out.structure.S = S.value();
  out.structure.topic_mask = topic_mask(topic_of_question);
  // raw scores grow with the embeddings and saturate the softmax, which
  // starves the straight-through path of gradient
  Var S_soft = cfg_.standardize_scores ? ad::standardize_rows(S, out.structure.topic_mask) : S;
  out.P = ad::row_softmax(S_soft, &out.structure.topic_mask);
  out.penalty = degree_variance_penalty(out.P, cfg_.lambda_deg);

  Var A_hat;
  if (mode == StructureMode::Empty) {
    out.structure.A = Matrix::Zero(q, q);
    out.structure.A_hat = Matrix::Zero(q, q);
    A_hat = tape.constant(out.structure.A_hat);
  } else {
    out.structure.A = topk_adjacency(S.value(), cfg_.k_sim, out.structure.topic_mask);
    out.structure.A_hat = out.structure.A / static_cast<double>(cfg_.k_sim);
    A_hat = mode == StructureMode::Hard ? ad::straight_through(out.structure.A_hat, out.P) : out.P;
  }

  // m_j from the source's user-question relation; zero when unknown
  std::vector<Var> m_rows;
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& r = source_relation[static_cast<std::size_t>(j)];
    if (!cfg_.use_relation_matrix || !r) {
      m_rows.push_back(tape.constant(Matrix::Zero(1, d_)));
      continue;
    }
    Var W = rgcn.relation_weight(tape, *r);
    if (W.rows() != d_ || W.cols() != d_) throw std::invalid_argument("rgsl: relation matrix does not match d");
    m_rows.push_back(cfg_.rowmean_axis == RowmeanAxis::Rows ? ad::mean_of_rows(W) : ad::mean_of_rows(ad::transpose(W)));
  }
  Var M = ad::concat_rows(m_rows);

  std::vector<int> group_of_source(static_cast<std::size_t>(q), 0);
  if (!cfg_.shared_relation_matrix) {
    for (Eigen::Index j = 0; j < q; ++j) {
      const auto& r = source_relation[static_cast<std::size_t>(j)];
      const int g = r && *r >= 0 && *r < n_answer_ ? *r : n_answer_;
      group_of_source[static_cast<std::size_t>(j)] = g;
    }
  }
  std::vector<int> used = group_of_source;
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());

  std::vector<Var> a_groups;
  std::vector<int> compact(group_of_source.size());
  Var B;
  for (std::size_t gi = 0; gi < used.size(); ++gi) {
    Var W = tape.param(Wrel[static_cast<std::size_t>(used[gi])]);
    Var W1 = ad::slice_cols(W, 0, d_);
    Var W2 = ad::slice_cols(W, d_, d_);
    a_groups.push_back(ad::matmul_nt(Hq, W1));
    Var Bg = ad::add(ad::matmul_nt(M, W1), ad::matmul_nt(Hq, W2));
    if (used.size() > 1) {
      std::vector<Eigen::Triplet<double>> trips;
      for (std::size_t j = 0; j < group_of_source.size(); ++j)
        if (group_of_source[j] == used[gi]) trips.emplace_back(static_cast<int>(j), static_cast<int>(j), 1.0);
      SparseMatrix sel(q, q);
      sel.setFromTriplets(trips.begin(), trips.end());
      Bg = ad::spmm(sel, Bg);
    }
    B = gi == 0 ? Bg : ad::add(B, Bg);
    for (std::size_t j = 0; j < group_of_source.size(); ++j)
      if (group_of_source[j] == used[gi]) compact[j] = static_cast<int>(gi);
  }

  Var agg = relation_aggregate(A_hat, a_groups, compact, B, Hq, cfg_.relation_activation);
  out.H = ad::activate(ad::add(agg, ad::matmul_nt(Hq, tape.param(Ws))), cfg_.output_activation);
  return out;
}

}  // namespace lami
