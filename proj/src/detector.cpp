#include "lami/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lami {

AttentionScorer::AttentionScorer(const std::string& name, Eigen::Index d, Rng& rng)
    : w1{name + ".w1", glorot(d, 2 * d, rng), true},
      b1{name + ".b1", Matrix::Zero(1, d), true},
      w2{name + ".w2", glorot(1, d, rng), true},
      b2{name + ".b2", Matrix::Zero(1, 1), true} {}

Var AttentionScorer::scores(Tape& tape, const Var& Hq, const Var& h_u) {
  Var x = ad::concat_cols(Hq, ad::repeat_rows(h_u, Hq.rows()));
  Var hidden = ad::activate(ad::add_row(ad::matmul_nt(x, tape.param(w1)), tape.param(b1)), Activation::Tanh);
  return ad::add_row(ad::matmul_nt(hidden, tape.param(w2)), tape.param(b2));
}

Vector AttentionScorer::scores(const Matrix& Hq, const RowVector& h_u) const {
  Matrix x(Hq.rows(), 2 * Hq.cols());
  x << Hq, h_u.replicate(Hq.rows(), 1);
  Matrix hidden = ((x * w1.value.transpose()).rowwise() + b1.value.row(0)).array().tanh().matrix();
  return (hidden * w2.value.transpose()).col(0).array() + b2.value(0, 0);
}

ClassifierHead::ClassifierHead(const std::string& name, Eigen::Index d, Rng& rng)
    : w{name + ".w", glorot(1, d, rng), true}, b{name + ".b", Matrix::Zero(1, 1), true} {}

Var ClassifierHead::logit(Tape& tape, const Var& h_agg) {
  return ad::add(ad::matmul_nt(h_agg, tape.param(w)), tape.param(b));
}

Vector attention_from_scores(const Vector& raw) {
  if (raw.size() == 0) throw std::invalid_argument("attention: no questions");
  const Vector e = (raw.array() - raw.maxCoeff()).exp();
  return e / e.sum();
}

Vector attention_scores(const Matrix& Hq, const RowVector& h_u, const AttentionScorer& scorer) {
  return attention_from_scores(scorer.scores(Hq, h_u));
}

RowVector aggregate_user(const Vector& alpha, const Matrix& Hq) {
  if (alpha.size() != Hq.rows()) throw std::invalid_argument("aggregate_user: alpha does not match question count");
  return alpha.transpose() * Hq;
}

double classify(const RowVector& h_agg, const RowVector& w, double b) {
  if (h_agg.size() != w.size()) throw std::invalid_argument("classify: dimension mismatch");
  return 1.0 / (1.0 + std::exp(-(h_agg.dot(w) + b)));
}

std::vector<int> select_topk_questions(const Vector& alpha, const std::vector<int>& ids, int k) {
  if (static_cast<Eigen::Index>(ids.size()) != alpha.size()) throw std::invalid_argument("select_topk: size mismatch");
  if (k < 0 || k > static_cast<int>(ids.size()))
    throw std::invalid_argument("select_topk: k_att " + std::to_string(k) + " exceeds " + std::to_string(ids.size()) +
                                " questions");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    if (alpha(ia) != alpha(ib)) return alpha(ia) > alpha(ib);
    return ids[a] < ids[b];
  });
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(ids[order[static_cast<std::size_t>(i)]]);
  return out;
}

DetectorModel::DetectorModel(const CorpusHeader& header, const DetectorConfig& cfg, Rng& init)
    : encoder("detector.encoder",
              RgcnEncoderConfig{static_cast<Eigen::Index>(header.d_in), cfg.d, header.relations.size(), cfg.n_layers,
                                cfg.n_bases},
              init),
      scorer("detector.scorer", cfg.d, init),
      head("detector.head", cfg.d, init),
      cfg_(cfg) {}

ParameterRefs DetectorModel::parameters() {
  ParameterRefs out = encoder.parameters();
  for (Parameter* p : scorer.parameters()) out.push_back(p);
  for (Parameter* p : head.parameters()) out.push_back(p);
  return out;
}

DetectorModel::Forward DetectorModel::forward(Tape& tape, const RelationalGraph& g) {
  Forward f;
  f.H = encoder.forward(tape, g);
  f.questions = g.question_nodes();
  if (f.questions.empty()) throw std::invalid_argument("detector: graph has no questions");
  Var Hq = ad::gather_rows(f.H, f.questions);
  Var h_u = ad::gather_rows(f.H, {g.user_node()});
  f.alpha = ad::row_softmax(ad::transpose(scorer.scores(tape, Hq, h_u)));
  f.h_agg = ad::matmul(f.alpha, Hq);
  f.logit = head.logit(tape, f.h_agg);
  return f;
}

DetectorModel::Prediction DetectorModel::predict(const RelationalGraph& g) {
  Tape tape;
  Forward f = forward(tape, g);
  Prediction p;
  p.probability = 1.0 / (1.0 + std::exp(-f.logit.scalar()));
  p.label = p.probability >= 0.5;
  p.alpha = f.alpha.value().row(0).transpose();
  p.h_agg = f.h_agg.value().row(0);
  p.top_questions = select_topk_questions(p.alpha, f.questions, std::min<int>(cfg_.k_att, static_cast<int>(f.questions.size())));
  return p;
}

}  // namespace lami
