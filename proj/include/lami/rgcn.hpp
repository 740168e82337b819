#pragma once

// Relation-typed graph convolution:
//   h_i' = act( sum_r sum_{j in N_i^r} W_r h_j / |N_i^r| + W_0 h_i )
// Node features are rows of H, so a layer computes H' = act(sum_r M_r W_r^T + H W_0^T)
// where M_r holds the per-relation neighbour means.

#include <span>
#include <string>
#include <vector>

#include "lami/autodiff.hpp"
#include "lami/graph.hpp"

namespace lami {

class RgcnLayer {
 public:
  /// n_bases == 0 gives one full matrix per relation.
  RgcnLayer(const std::string& name, int n_relations, Eigen::Index d_in, Eigen::Index d_out, int n_bases,
            Activation act, Rng& rng);

  /// Nodes listed in `inflow_masked` receive only their self term.
  Var forward(Tape& tape, const RelationalGraph& g, const Var& H, std::span<const int> inflow_masked = {});

  /// W_r, d_out x d_in. In basis mode W_r = sum_b coeff[r, b] * basis_b.
  Var relation_weight(Tape& tape, int r);
  Matrix relation_weight(int r) const;

  ParameterRefs parameters();

  int n_relations() const { return n_relations_; }
  int n_bases() const { return n_bases_; }
  Eigen::Index d_in() const { return d_in_; }
  Eigen::Index d_out() const { return d_out_; }
  Activation activation() const { return act_; }
  void set_activation(Activation a) { act_ = a; }

  Parameter self;
  std::vector<Parameter> relation;  // full mode
  Parameter bases;                  // basis mode: n_bases x (d_out * d_in)
  Parameter coeffs;                 // basis mode: n_relations x n_bases

 private:
  int n_relations_;
  int n_bases_;
  Eigen::Index d_in_;
  Eigen::Index d_out_;
  Activation act_;
};

/// Neighbour-mean operator of one relation: row i averages the sources of
/// edges (j -> i) of that relation. Rows of masked nodes are empty.
SparseMatrix relation_mean_operator(const RelationalGraph& g, int relation, std::span<const int> inflow_masked = {});

struct RgcnEncoderConfig {
  Eigen::Index d_in = 128;
  Eigen::Index d = 128;
  int n_relations = 0;
  int n_layers = 3;
  int n_bases = -1;  // -1: 16 bases when n_relations > 64, else full matrices
};

int resolve_bases(const RgcnEncoderConfig& cfg);

/// Stacked layers, ReLU between layers and identity on the last one. A linear
/// input projection maps d_in to d when they differ.
class RgcnEncoder {
 public:
  RgcnEncoder(const std::string& prefix, const RgcnEncoderConfig& cfg, Rng& rng);

  /// Node embeddings, |V| x d.
  Var forward(Tape& tape, const RelationalGraph& g, std::span<const int> inflow_masked = {});
  Var input(Tape& tape, const RelationalGraph& g);

  ParameterRefs parameters();
  const RgcnEncoderConfig& config() const { return cfg_; }
  RgcnLayer& last() { return layers.back(); }

  std::vector<RgcnLayer> layers;
  std::vector<Parameter> input_projection;  // empty or one d x d_in matrix

 private:
  RgcnEncoderConfig cfg_;
};

/// Node feature matrix, one row per node id.
Matrix node_features(const RelationalGraph& g);

}  // namespace lami
