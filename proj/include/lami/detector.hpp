#pragma once

// Attention readout over the question nodes of an (enriched) graph and a
// logistic classifier on the aggregated user representation.

#include <string>
#include <vector>

#include "lami/graph.hpp"
#include "lami/rgcn.hpp"

namespace lami {

/// MLP([h_i || h_u]) -> scalar: tanh hidden layer of width d, linear output.
struct AttentionScorer {
  Parameter w1;  // d x 2d
  Parameter b1;  // 1 x d
  Parameter w2;  // 1 x d
  Parameter b2;  // 1 x 1

  AttentionScorer(const std::string& name, Eigen::Index d, Rng& rng);
  /// Raw scores, Q x 1.
  Var scores(Tape& tape, const Var& Hq, const Var& h_u);
  Vector scores(const Matrix& Hq, const RowVector& h_u) const;
  ParameterRefs parameters() { return {&w1, &b1, &w2, &b2}; }
};

struct ClassifierHead {
  Parameter w;  // 1 x d
  Parameter b;  // 1 x 1

  ClassifierHead(const std::string& name, Eigen::Index d, Rng& rng);
  Var logit(Tape& tape, const Var& h_agg);
  ParameterRefs parameters() { return {&w, &b}; }
};

/// softmax of raw scores.
Vector attention_from_scores(const Vector& raw);
Vector attention_scores(const Matrix& Hq, const RowVector& h_u, const AttentionScorer& scorer);
RowVector aggregate_user(const Vector& alpha, const Matrix& Hq);
double classify(const RowVector& h_agg, const RowVector& w, double b);
/// Positions of the k largest alpha, descending; ties go to the lower id.
std::vector<int> select_topk_questions(const Vector& alpha, const std::vector<int>& ids, int k);

struct DetectorConfig {
  Eigen::Index d = 128;
  int n_layers = 3;
  int n_bases = -1;
  int k_att = 20;
  bool warm_start = false;  // copy the pretext encoder weights
};

class DetectorModel {
 public:
  DetectorModel(const CorpusHeader& header, const DetectorConfig& cfg, Rng& init);
  DetectorModel(const DetectorModel&) = delete;
  DetectorModel& operator=(const DetectorModel&) = delete;

  struct Forward {
    Var H;
    Var alpha;  // 1 x Q
    Var h_agg;  // 1 x d
    Var logit;  // 1 x 1
    std::vector<int> questions;
  };
  Forward forward(Tape& tape, const RelationalGraph& g);

  struct Prediction {
    double probability = 0.0;
    bool label = false;
    std::vector<int> top_questions;  // node ids, alpha-descending
    Vector alpha;
    RowVector h_agg;
  };
  Prediction predict(const RelationalGraph& g);

  ParameterRefs parameters();
  const DetectorConfig& config() const { return cfg_; }

  RgcnEncoder encoder;
  AttentionScorer scorer;
  ClassifierHead head;

 private:
  DetectorConfig cfg_;
};

}  // namespace lami
