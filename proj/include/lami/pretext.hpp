#pragma once

// Masked user-question edge-type prediction. The user node is inflow-masked,
// so cross-question evidence about a masked answer can only arrive through
// the learned question-question structure.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lami/graph.hpp"
#include "lami/optim.hpp"
#include "lami/rgcn.hpp"
#include "lami/rgsl.hpp"

namespace lami {

struct MaskedInstance {
  RelationalGraph graph;  // both directions of (u, q) removed
  int target_question = 0;  // node id
  int target_relation = 0;
};

/// Uniform choice over question nodes.
MaskedInstance mask_random_user_edge(const RelationalGraph& g, Rng& rng);

/// -log softmax(logits)[target].
double edge_type_loss(const RowVector& logits, int target);

struct PretextConfig {
  Eigen::Index d = 128;
  int n_layers = 3;
  int n_bases = -1;
  bool use_rgsl = true;
  bool inflow_restriction = true;
  RgslConfig rgsl;
  int epochs = 20;
  int batch_size = 16;
  AdamConfig adam;
};

class PretextModel {
 public:
  PretextModel(const CorpusHeader& header, const PretextConfig& cfg, Rng& init);
  PretextModel(const PretextModel&) = delete;
  PretextModel& operator=(const PretextModel&) = delete;

  struct Forward {
    Var H;             // encoder output, |V| x d
    Var Hq;            // question rows after RGSL (or encoder rows without it)
    Var logits;        // 1 x |R_answer| for the target (invalid when no target)
    Var penalty;       // 1x1; zero without RGSL
    std::optional<LearnedStructure> structure;
    std::vector<int> questions;  // node ids, row order of Hq
  };

  /// target_question < 0 skips the head (structure inference).
  Forward forward(Tape& tape, const RelationalGraph& g, int target_question,
                  StructureMode mode = StructureMode::Hard);

  /// Classes the head may predict for a question node.
  BoolMatrix candidate_mask(const RelationalGraph& g, int question_node) const;

  /// Structure of an unmasked graph under the current parameters.
  LearnedStructure infer_structure(const RelationalGraph& g);

  ParameterRefs parameters();
  const PretextConfig& config() const { return cfg_; }
  const CorpusHeader& header() const { return header_; }
  int answer_relations() const { return header_.relations.answer_count(); }

  RgcnEncoder encoder;
  RgslLayer rgsl;
  Parameter head_w;  // |R_answer| x 2d
  Parameter head_b;  // 1 x |R_answer|

 private:
  CorpusHeader header_;
  PretextConfig cfg_;
};

/// Loss terms of one masked instance, recorded on `tape`.
struct InstanceLoss {
  Var edge;     // cross-entropy
  Var total;    // edge + penalty
  bool correct = false;
  double degree_variance = 0.0;  // of the hard adjacency
};
InstanceLoss instance_loss(PretextModel& model, Tape& tape, const MaskedInstance& inst);

struct PretextEpoch {
  int epoch = 0;
  double loss = 0.0;        // mean of edge + penalty
  double edge_loss = 0.0;   // mean cross-entropy
  double penalty = 0.0;
  double accuracy = 0.0;    // masked-edge accuracy on the epoch's instances
  double degree_variance = 0.0;  // mean per-graph column-degree variance of A
};

struct PretextResult {
  std::vector<PretextEpoch> log;
};

/// Adam over the whole corpus, one masked edge per graph per epoch. Throws
/// TrainingError on a non-finite loss.
PretextResult pretrain(PretextModel& model, std::span<const RelationalGraph> graphs, Rng& rng);

/// Masked-edge accuracy and mean loss with one fresh mask per graph.
struct PretextEval {
  double accuracy = 0.0;
  double loss = 0.0;
  double majority_accuracy = 0.0;  // predict each question's most frequent answer in `reference`
};
PretextEval evaluate_pretext(PretextModel& model, std::span<const RelationalGraph> graphs,
                             std::span<const RelationalGraph> reference, Rng& rng);

std::vector<LearnedStructure> infer_structures(PretextModel& model, std::span<const RelationalGraph> graphs);

/// Adds one LATENT edge pair per selected question pair (i -> j and j -> i
/// selections collapse to one pair).
RelationalGraph enrich_graph(const RelationalGraph& g, const LearnedStructure& s, int latent_relation);

/// Unordered latent question pairs (node ids, lower first) of a structure.
std::vector<std::pair<int, int>> latent_pairs(const RelationalGraph& g, const LearnedStructure& s);

/// One JSON line: respondent id and selected (source, target, score) triples by question id.
std::string structure_to_json(const RelationalGraph& g, const LearnedStructure& s);

std::string pretext_epoch_to_json(const PretextEpoch& e);

}  // namespace lami
