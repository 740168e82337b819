#pragma once

// End-to-end runs: split, normalise, pretext + enrichment, LM warm-up,
// bi-modal training, evaluation, multi-seed aggregation and sweeps.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lami/bimodal.hpp"
#include "lami/detector.hpp"
#include "lami/graph.hpp"
#include "lami/lm.hpp"
#include "lami/metrics.hpp"
#include "lami/pretext.hpp"

namespace lami {

struct Ablations {
  bool no_relation_matrix = false;
  bool no_latent_learning = false;
  bool no_llm = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Eigen::Index d = 128;
  int n_layers = 3;
  int n_bases = -1;
  int k_sim = 5;
  int k_att = 20;
  double lambda_deg = 0.1;
  double lr = 5e-5;
  double weight_decay = 5e-4;
  int pretext_batch = 16;
  int pretext_epochs = 20;
  int bimodal_batch = 4;
  int bimodal_epochs = 10;
  bool shared_relation_matrix = true;
  RowmeanAxis rowmean_axis = RowmeanAxis::Rows;
  Activation relation_activation = Activation::Sigmoid;
  Activation rgsl_output_activation = Activation::Identity;
  bool standardize_scores = true;
  bool warm_start = false;
  LmConfig lm;
  int lm_warm_epochs = 2;
  double lm_lr = 1e-3;
  int max_tokens = 48;
  Ablations ablation;
  double split_train = 0.70;
  double split_val = 0.15;
  double split_test = 0.15;

  /// Throws UsageError on an invalid combination.
  void validate() const;
  PretextConfig pretext_config() const;
  DetectorConfig detector_config() const;
  BimodalConfig bimodal_config() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);
/// Applies one "name" ablation (no_relation_matrix, no_latent_learning, no_llm).
void apply_ablation(RunConfig& cfg, const std::string& name);
/// Sets k_sim, k_att or lambda_deg from a string value.
void set_sweep_parameter(RunConfig& cfg, const std::string& name, const std::string& value);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Per-class shuffles; each class contributes round(n * fraction) to train and val.
Split stratified_split(const std::vector<RelationalGraph>& graphs, double train, double val, Rng& rng);

/// z-scores the numeric user-feature columns with statistics from the fit set.
struct FeatureNormalizer {
  std::vector<int> columns;
  std::vector<double> mean;
  std::vector<double> stddev;

  static FeatureNormalizer fit(const std::vector<RelationalGraph>& graphs, const std::vector<std::size_t>& rows,
                               const std::vector<int>& columns);
  void apply(RelationalGraph& g) const;
};

/// Everything a finished run holds in memory.
struct RunArtifacts {
  RunConfig config;
  CorpusHeader header;
  Split split;
  FeatureNormalizer normalizer;
  std::vector<RelationalGraph> graphs;     // normalised, unenriched
  std::vector<RelationalGraph> enriched;   // detector inputs (unenriched under no_latent_learning)
  std::vector<LearnedStructure> structures;
  std::vector<std::vector<std::pair<int, int>>> latent;
  std::unique_ptr<PretextModel> pretext;
  std::unique_ptr<DetectorModel> detector;
  std::unique_ptr<ProjectionHead> projection;
  std::unique_ptr<TinyDecoderLM> lm;

  std::vector<PretextEpoch> pretext_log;
  std::vector<double> lm_warm_log;
  std::vector<BimodalEpoch> bimodal_log;
  std::uint64_t lm_digest_before = 0;
  std::uint64_t lm_digest_after = 0;

  EvalReport test_report;
  std::optional<EvalReport> val_report;
  std::optional<double> lm_agreement;  // share of test graphs where the LM's first token matches the classifier

  std::vector<std::string> log_lines;  // JSON lines
  BimodalExample example(std::size_t i) const { return BimodalExample{&enriched[i], latent[i]}; }
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every stage on `corpus`. Writes checkpoints, logs, structures and the
/// report to `out_dir` when it is non-empty.
std::unique_ptr<RunArtifacts> run_pipeline(const Corpus& corpus, const RunConfig& cfg, const std::string& out_dir = "",
                                           const ProgressFn& progress = {});

struct MultiSeedResult {
  std::vector<std::uint64_t> seeds;
  std::vector<EvalReport> reports;
  AggregateReport aggregate;
};

MultiSeedResult run_seeds(const Corpus& corpus, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                          const std::string& out_dir = "", const ProgressFn& progress = {});

/// One run per value; returns CSV text with a header row.
std::string run_sweep(const Corpus& corpus, const RunConfig& cfg, const std::string& parameter,
                      const std::vector<std::string>& values, const ProgressFn& progress = {});

/// Rebuilds a finished run from `dir` (run.json + checkpoints) over `corpus`.
std::unique_ptr<RunArtifacts> load_run(const Corpus& corpus, const std::string& dir);

/// Test-style report over `rows` of a finished or loaded run.
EvalReport evaluate_run(RunArtifacts& run, const std::vector<std::size_t>& rows);

/// Explanation records for the requested respondent ids (DataError for unknown ids).
std::vector<Explanation> explain(RunArtifacts& run, const std::vector<std::string>& respondent_ids);

/// Mean over graphs and planted endpoints of A[endpoint][partner]; pairs are
/// question ids. Also returns the analytic random-selection baseline k / eligible.
struct RecoveryResult {
  double precision = 0.0;
  double baseline = 0.0;
};
RecoveryResult planted_recovery(const std::vector<RelationalGraph>& graphs,
                                const std::vector<LearnedStructure>& structures,
                                const std::vector<std::pair<std::string, std::string>>& planted, int k_sim);

}  // namespace lami
