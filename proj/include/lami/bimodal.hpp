#pragma once

// Joint training of the detector and a projection head against a frozen LM:
//   L_bi = L_gen + L_cls
// L_gen is the label-token loss of the LM conditioned on the projected graph
// token z_u = P h_agg prepended to the variant A prompt.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lami/detector.hpp"
#include "lami/lm.hpp"
#include "lami/optim.hpp"
#include "lami/prompt.hpp"

namespace lami {

struct ProjectionHead {
  Parameter w;  // d_lm x d

  ProjectionHead(const std::string& name, Eigen::Index d, Eigen::Index d_lm, Rng& rng);
  Var project(Tape& tape, const Var& h_agg);
  ParameterRefs parameters() { return {&w}; }
};

RowVector project_graph_token(const RowVector& h_agg, const Matrix& w);

/// l_gen + l_cls.
double bimodal_loss(double l_gen, double l_cls);
Var bimodal_loss(const Var& l_gen, const Var& l_cls);

/// One training or inference example: an (enriched) graph and its latent pairs.
struct BimodalExample {
  const RelationalGraph* graph = nullptr;
  std::vector<std::pair<int, int>> latent;
};

struct BimodalConfig {
  int epochs = 10;
  int batch_size = 4;
  AdamConfig adam;
  bool use_llm = true;  // false: L_cls only, no LM computation at all
  int k_att = 20;
};

struct BimodalEpoch {
  int epoch = 0;
  double l_bi = 0.0;
  double l_gen = 0.0;
  double l_cls = 0.0;
  double accuracy = 0.0;  // classifier accuracy on the training examples
  bool has_gen = true;
};

struct BimodalStepLoss {
  Var l_gen;  // invalid without the LM
  Var l_cls;
  Var l_bi;
  double probability = 0.0;
};

/// Records the losses of one example on `tape`.
BimodalStepLoss bimodal_step(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM* lm,
                             const CorpusHeader& header, const BimodalExample& ex, int k_att, Tape& tape);

/// Optimises detector and projection parameters. The LM must be frozen; a
/// digest change after training raises TrainingError.
std::vector<BimodalEpoch> train_bimodal(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM* lm,
                                        const CorpusHeader& header, std::span<const BimodalExample> examples,
                                        const BimodalConfig& cfg, Rng& rng);

std::string bimodal_epoch_to_json(const BimodalEpoch& e);

struct LmWarmConfig {
  int epochs = 2;
  int batch_size = 8;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.0};
};

/// Next-token training on templated prompts with gold labels: variant A
/// followed by the label, and variant B followed by a templated rationale.
/// Uses a zero prefix so the prefix slot is seen during training.
std::vector<double> warm_train_lm(TinyDecoderLM& lm, const CorpusHeader& header,
                                  std::span<const BimodalExample> examples, int k_att, const LmWarmConfig& cfg,
                                  Rng& rng);

/// Vocabulary over the prompt templates, question wording and answer categories.
Tokenizer build_tokenizer(const CorpusHeader& header);

struct Explanation {
  std::string respondent_id;
  bool predicted_label = false;
  double probability = 0.0;
  std::vector<std::pair<std::string, double>> questions;  // id, alpha
  std::vector<std::pair<std::string, std::string>> cues;  // question ids
  std::string text;
  bool lm_label = false;  // first generated token is Yes
  bool truncated = false;
};

Explanation generate_explanation(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM& lm,
                                 const CorpusHeader& header, const BimodalExample& ex, int k_att,
                                 const GenerationConfig& gen = {});

std::string explanation_to_json(const Explanation& e);

}  // namespace lami
