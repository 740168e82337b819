#pragma once

// Relational graph structure learning over the question nodes of one graph.
//
//   S      = (H_q W_a^T)(H_q W_a^T)^T
//   A      = per-row top-k_sim of S over cross-topic pairs, Â = A / k_sim
//   r_ij   = act_r( W_Rel [ (h_i + m_j) || h_j ] ),  m_j = rowmean(W_{rel(j)})
//   h_i'   = act_o( sum_j Â_ij (r_ij * h_j) + W_s h_i )
//
// Â is hard in the forward pass; its gradient is routed to P = softmax of S
// restricted to eligible pairs (straight-through).

#include <optional>
#include <string>
#include <vector>

#include "lami/autodiff.hpp"
#include "lami/rgcn.hpp"

namespace lami {

enum class RowmeanAxis { Rows, Cols };

struct RgslConfig {
  int k_sim = 5;
  double lambda_deg = 0.1;
  bool shared_relation_matrix = true;  // false: one W_Rel per answer relation plus one for unknown
  bool use_relation_matrix = true;     // false drops m_j (the no_relation_matrix ablation)
  RowmeanAxis rowmean_axis = RowmeanAxis::Rows;
  Activation relation_activation = Activation::Sigmoid;
  Activation output_activation = Activation::Identity;
  /// Standardise each row of S over its eligible entries before the surrogate
  /// softmax and the degree penalty. The hard selection is unaffected (top-k
  /// is invariant to a positive affine map per row).
  bool standardize_scores = true;
};

struct LearnedStructure {
  Matrix S;
  Matrix A;     // 0/1
  Matrix A_hat; // A / k_sim
  BoolMatrix topic_mask;
};

Matrix score_pairs(const Matrix& Hq, const Matrix& Wa);
/// eligible(i, j) iff the two questions sit in different topics.
BoolMatrix topic_mask(const std::vector<int>& topic_of_question);
/// Per row, the k largest eligible scores; ties go to the lower column.
Matrix topk_adjacency(const Matrix& S, int k, const BoolMatrix& mask);
Matrix row_normalize(const Matrix& A);
/// lambda * population variance of the column sums of P.
Var degree_variance_penalty(const Var& P, double lambda);
double degree_variance(const Matrix& P);
/// Reference single-pair relation vector; W_rel is d x 2d.
Vector relation_vector(const Vector& h_i, const Vector& h_j, const Matrix& W_r, const Matrix& W_rel, Activation act,
                       RowmeanAxis axis = RowmeanAxis::Rows, bool use_relation_matrix = true);
Vector rowmean(const Matrix& W, RowmeanAxis axis = RowmeanAxis::Rows);

/// out_i = sum_j Â_ij act(a_{g(j)}[i] + b_j) * h_j. The gradient reaching Â is
/// dense so that a straight-through Â passes it to every eligible pair.
Var relation_aggregate(const Var& A_hat, std::span<const Var> a_groups, const std::vector<int>& group_of_source,
                       const Var& B, const Var& H, Activation act);

enum class StructureMode {
  Hard,  // hard Â forward, straight-through gradient
  Soft,  // P used in the forward pass (surrogate checks)
  Empty  // no neighbours; test only
};

class RgslLayer {
 public:
  RgslLayer(const std::string& name, Eigen::Index d, int n_answer_relations, const RgslConfig& cfg, Rng& rng);

  struct Output {
    Var H;        // Q x d
    Var penalty;  // 1x1, lambda already applied
    Var P;        // masked row-softmax of S
    LearnedStructure structure;
  };

  /// source_relation[j]: answer relation of question j, nullopt when masked.
  /// relation weights come from `rgcn` (its relation_weight(tape, r)).
  Output forward(Tape& tape, const Var& Hq, const std::vector<int>& topic_of_question,
                 const std::vector<std::optional<int>>& source_relation, RgcnLayer& rgcn,
                 StructureMode mode = StructureMode::Hard);

  ParameterRefs parameters();
  const RgslConfig& config() const { return cfg_; }
  RgslConfig& config() { return cfg_; }

  Parameter Wa;
  Parameter Ws;
  std::vector<Parameter> Wrel;  // d x 2d each

 private:
  RgslConfig cfg_;
  Eigen::Index d_;
  int n_answer_;
};

}  // namespace lami
