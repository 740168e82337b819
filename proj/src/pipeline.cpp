#include "lami/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lami/checkpoint.hpp"
#include "lami/errors.hpp"

namespace lami {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("config: " + m); };
  if (d < 1 || n_layers < 1) fail("d and n_layers must be positive");
  if (k_sim < 1) fail("k_sim must be positive");
  if (k_att < 1) fail("k_att must be positive");
  if (lambda_deg < 0.0) fail("lambda_deg must be non-negative");
  if (!(lr > 0.0) || weight_decay < 0.0) fail("lr must be positive and weight_decay non-negative");
  if (pretext_batch < 1 || bimodal_batch < 1) fail("batch sizes must be positive");
  if (pretext_epochs < 0 || bimodal_epochs < 0 || lm_warm_epochs < 0) fail("epochs must be non-negative");
  if (lm.d_lm < 1 || lm.n_heads < 1 || lm.d_lm % lm.n_heads != 0) fail("lm.d_lm must be a multiple of lm.n_heads");
  if (lm.n_layers < 1 || lm.d_ff < 1) fail("lm layers and d_ff must be positive");
  if (!(lm_lr > 0.0) || max_tokens < 1) fail("lm.lr and lm.max_tokens must be positive");
  if (!(split_train > 0.0 && split_val > 0.0 && split_test > 0.0)) fail("split fractions must be positive");
  if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9) fail("split fractions must sum to 1");
}

PretextConfig RunConfig::pretext_config() const {
  PretextConfig p;
  p.d = d;
  p.n_layers = n_layers;
  p.n_bases = n_bases;
  p.use_rgsl = true;
  p.inflow_restriction = true;
  p.rgsl.k_sim = k_sim;
  p.rgsl.lambda_deg = lambda_deg;
  p.rgsl.shared_relation_matrix = shared_relation_matrix;
  p.rgsl.use_relation_matrix = !ablation.no_relation_matrix;
  p.rgsl.rowmean_axis = rowmean_axis;
  p.rgsl.relation_activation = relation_activation;
  p.rgsl.output_activation = rgsl_output_activation;
  p.rgsl.standardize_scores = standardize_scores;
  p.epochs = pretext_epochs;
  p.batch_size = pretext_batch;
  p.adam.lr = lr;
  p.adam.weight_decay = weight_decay;
  return p;
}

DetectorConfig RunConfig::detector_config() const {
  DetectorConfig c;
  c.d = d;
  c.n_layers = n_layers;
  c.n_bases = n_bases;
  c.k_att = k_att;
  c.warm_start = warm_start;
  return c;
}

BimodalConfig RunConfig::bimodal_config() const {
  BimodalConfig c;
  c.epochs = bimodal_epochs;
  c.batch_size = bimodal_batch;
  c.adam.lr = lr;
  c.adam.weight_decay = weight_decay;
  c.use_llm = !ablation.no_llm;
  c.k_att = k_att;
  return c;
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw UsageError("config: unknown key '" + where + k + "'");
  }
}

RowmeanAxis parse_axis(const std::string& s) {
  if (s == "rows") return RowmeanAxis::Rows;
  if (s == "cols") return RowmeanAxis::Cols;
  throw UsageError("config: rowmean_axis must be rows or cols");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  RunConfig c;
  try {
    const json j = json::parse(json_text);
    reject_unknown(j,
                   {"seed", "d", "n_layers", "n_bases", "k_sim", "k_att", "lambda_deg", "lr", "weight_decay",
                    "pretext", "bimodal", "rgsl", "warm_start", "lm", "ablation", "split"},
                   "");
    take(j, "seed", c.seed);
    take(j, "d", c.d);
    take(j, "n_layers", c.n_layers);
    take(j, "n_bases", c.n_bases);
    take(j, "k_sim", c.k_sim);
    take(j, "k_att", c.k_att);
    take(j, "lambda_deg", c.lambda_deg);
    take(j, "lr", c.lr);
    take(j, "weight_decay", c.weight_decay);
    take(j, "warm_start", c.warm_start);
    if (j.contains("pretext")) {
      const json& p = j.at("pretext");
      reject_unknown(p, {"batch", "epochs"}, "pretext.");
      take(p, "batch", c.pretext_batch);
      take(p, "epochs", c.pretext_epochs);
    }
    if (j.contains("bimodal")) {
      const json& p = j.at("bimodal");
      reject_unknown(p, {"batch", "epochs"}, "bimodal.");
      take(p, "batch", c.bimodal_batch);
      take(p, "epochs", c.bimodal_epochs);
    }
    if (j.contains("rgsl")) {
      const json& r = j.at("rgsl");
      reject_unknown(r,
                     {"shared_relation_matrix", "rowmean_axis", "relation_activation", "output_activation",
                      "standardize_scores"},
                     "rgsl.");
      take(r, "shared_relation_matrix", c.shared_relation_matrix);
      take(r, "standardize_scores", c.standardize_scores);
      if (r.contains("rowmean_axis")) c.rowmean_axis = parse_axis(r.at("rowmean_axis").get<std::string>());
      if (r.contains("relation_activation"))
        c.relation_activation = parse_activation(r.at("relation_activation").get<std::string>());
      if (r.contains("output_activation"))
        c.rgsl_output_activation = parse_activation(r.at("output_activation").get<std::string>());
    }
    if (j.contains("lm")) {
      const json& l = j.at("lm");
      reject_unknown(l, {"d_lm", "n_layers", "n_heads", "d_ff", "warm_epochs", "lr", "max_tokens"}, "lm.");
      take(l, "d_lm", c.lm.d_lm);
      take(l, "n_layers", c.lm.n_layers);
      take(l, "n_heads", c.lm.n_heads);
      take(l, "d_ff", c.lm.d_ff);
      take(l, "warm_epochs", c.lm_warm_epochs);
      take(l, "lr", c.lm_lr);
      take(l, "max_tokens", c.max_tokens);
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      reject_unknown(a, {"no_relation_matrix", "no_latent_learning", "no_llm"}, "ablation.");
      take(a, "no_relation_matrix", c.ablation.no_relation_matrix);
      take(a, "no_latent_learning", c.ablation.no_latent_learning);
      take(a, "no_llm", c.ablation.no_llm);
    }
    if (j.contains("split")) {
      const json& s = j.at("split");
      reject_unknown(s, {"train", "val", "test"}, "split.");
      take(s, "train", c.split_train);
      take(s, "val", c.split_val);
      take(s, "test", c.split_test);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  return json{{"seed", c.seed},
              {"d", c.d},
              {"n_layers", c.n_layers},
              {"n_bases", c.n_bases},
              {"k_sim", c.k_sim},
              {"k_att", c.k_att},
              {"lambda_deg", c.lambda_deg},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"warm_start", c.warm_start},
              {"pretext", {{"batch", c.pretext_batch}, {"epochs", c.pretext_epochs}}},
              {"bimodal", {{"batch", c.bimodal_batch}, {"epochs", c.bimodal_epochs}}},
              {"rgsl",
               {{"shared_relation_matrix", c.shared_relation_matrix},
                {"rowmean_axis", c.rowmean_axis == RowmeanAxis::Rows ? "rows" : "cols"},
                {"relation_activation", to_string(c.relation_activation)},
                {"output_activation", to_string(c.rgsl_output_activation)},
                {"standardize_scores", c.standardize_scores}}},
              {"lm",
               {{"d_lm", c.lm.d_lm},
                {"n_layers", c.lm.n_layers},
                {"n_heads", c.lm.n_heads},
                {"d_ff", c.lm.d_ff},
                {"warm_epochs", c.lm_warm_epochs},
                {"lr", c.lm_lr},
                {"max_tokens", c.max_tokens}}},
              {"ablation",
               {{"no_relation_matrix", c.ablation.no_relation_matrix},
                {"no_latent_learning", c.ablation.no_latent_learning},
                {"no_llm", c.ablation.no_llm}}},
              {"split", {{"train", c.split_train}, {"val", c.split_val}, {"test", c.split_test}}}}
      .dump(2);
}

void apply_ablation(RunConfig& cfg, const std::string& name) {
  if (name == "no_relation_matrix") {
    cfg.ablation.no_relation_matrix = true;
  } else if (name == "no_latent_learning") {
    cfg.ablation.no_latent_learning = true;
  } else if (name == "no_llm") {
    cfg.ablation.no_llm = true;
  } else if (name != "none") {
    throw UsageError("unknown ablation '" + name + "'");
  }
}

void set_sweep_parameter(RunConfig& cfg, const std::string& name, const std::string& value) {
  try {
    std::size_t used = 0;
    if (name == "k_sim") {
      cfg.k_sim = std::stoi(value, &used);
    } else if (name == "k_att") {
      cfg.k_att = std::stoi(value, &used);
    } else if (name == "lambda_deg") {
      cfg.lambda_deg = std::stod(value, &used);
    } else {
      throw UsageError("sweep parameter must be k_sim, k_att or lambda_deg, got '" + name + "'");
    }
    if (used != value.size()) throw std::invalid_argument(value);
  } catch (const std::logic_error&) {
    throw UsageError("invalid value '" + value + "' for " + name);
  }
  cfg.validate();
}

// ---------------------------------------------------------------------------
// Data preparation

Split stratified_split(const std::vector<RelationalGraph>& graphs, double train, double val, Rng& rng) {
  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (!graphs[i].label) throw DataError("missing-label", "graph " + graphs[i].respondent_id + " is unlabelled");
    cls[*graphs[i].label ? 1 : 0].push_back(i);
  }
  Split s;
  for (auto& c : cls) {
    for (std::size_t i = c.size(); i > 1; --i) std::swap(c[i - 1], c[rng.index(i)]);
    const auto n = static_cast<double>(c.size());
    const auto n_train = std::min(c.size(), static_cast<std::size_t>(std::llround(n * train)));
    const auto n_val = std::min(c.size() - n_train, static_cast<std::size_t>(std::llround(n * val)));
    s.train.insert(s.train.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.insert(s.val.end(), c.begin() + static_cast<std::ptrdiff_t>(n_train),
                 c.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.insert(s.test.end(), c.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), c.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

FeatureNormalizer FeatureNormalizer::fit(const std::vector<RelationalGraph>& graphs,
                                         const std::vector<std::size_t>& rows, const std::vector<int>& columns) {
  FeatureNormalizer n;
  n.columns = columns;
  for (int c : columns) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i : rows) {
      const double x = graphs[i].nodes[static_cast<std::size_t>(graphs[i].user_node())].features(c);
      sum += x;
      sq += x * x;
    }
    const double count = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    n.mean.push_back(mean);
    n.stddev.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
  }
  return n;
}

void FeatureNormalizer::apply(RelationalGraph& g) const {
  Vector& f = g.nodes[static_cast<std::size_t>(g.user_node())].features;
  for (std::size_t k = 0; k < columns.size(); ++k) f(columns[k]) = (f(columns[k]) - mean[k]) / stddev[k];
}

namespace {

std::vector<RelationalGraph> subset(const std::vector<RelationalGraph>& graphs, const std::vector<std::size_t>& idx) {
  std::vector<RelationalGraph> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(graphs[i]);
  return out;
}

void check_corpus(const Corpus& corpus) {
  if (corpus.graphs.empty()) throw DataError("empty-corpus", "corpus has no graphs");
  for (const auto& g : corpus.graphs) {
    const ValidationReport r = validate_graph(g);
    if (!r.ok())
      throw DataError("invalid-graph", "graph " + g.respondent_id + ": " + r.violations.front().code + " " +
                                           r.violations.front().message);
    if (!g.label) throw DataError("missing-label", "graph " + g.respondent_id + " is unlabelled");
    if (g.codebook_id != corpus.header.codebook_id)
      throw DataError("heterogeneous-codebook", "graph " + g.respondent_id + " comes from another codebook");
  }
}

std::string lm_metadata(const TinyDecoderLM& lm) {
  return json{{"vocabulary", lm.tokenizer().vocabulary()},
              {"d_lm", lm.config().d_lm},
              {"n_layers", lm.config().n_layers},
              {"n_heads", lm.config().n_heads},
              {"d_ff", lm.config().d_ff},
              {"digest", lm.digest()}}
      .dump();
}

json normalizer_json(const FeatureNormalizer& n) {
  return json{{"columns", n.columns}, {"mean", n.mean}, {"stddev", n.stddev}};
}

ParameterRefs detector_and_projection(RunArtifacts& run) {
  ParameterRefs p = run.detector->parameters();
  if (run.projection)
    for (Parameter* q : run.projection->parameters()) p.push_back(q);
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("io", "cannot write " + path.string());
  out << text;
}

std::optional<EvalReport> evaluate(RunArtifacts& run, const std::vector<std::size_t>& rows, bool allow_single_class) {
  std::vector<double> probs;
  std::vector<char> labels;
  probs.resize(rows.size());
  parallel_for(rows.size(), [&](std::size_t k) { probs[k] = run.detector->predict(run.enriched[rows[k]]).probability; });
  bool any_pos = false;
  bool any_neg = false;
  std::vector<bool> y;
  for (std::size_t i : rows) {
    y.push_back(*run.graphs[i].label);
    (*run.graphs[i].label ? any_pos : any_neg) = true;
  }
  if (!(any_pos && any_neg)) {
    if (allow_single_class) return std::nullopt;
    throw DataError("single-class-split", "evaluation split holds one class only; AUC is undefined");
  }
  std::vector<double> pv(probs.begin(), probs.end());
  std::unique_ptr<bool[]> yb(new bool[y.size()]);
  for (std::size_t i = 0; i < y.size(); ++i) yb[i] = y[i];
  return compute_metrics(pv, std::span<const bool>(yb.get(), y.size()));
}

double lm_agreement(RunArtifacts& run, const std::vector<std::size_t>& rows) {
  std::vector<char> agree(rows.size(), 0);
  parallel_for(rows.size(), [&](std::size_t k) {
    const BimodalExample ex = run.example(rows[k]);
    Tape tape;
    auto f = run.detector->forward(tape, *ex.graph);
    const Vector alpha = f.alpha.value().row(0).transpose();
    const auto selected = select_topk_questions(
        alpha, f.questions, std::min<int>(run.config.k_att, static_cast<int>(f.questions.size())));
    const PromptBundle b = textualize(*ex.graph, run.header, selected, ex.latent, PromptVariant::B, &run.lm->tokenizer());
    Var z = run.projection->project(tape, f.h_agg);
    const RowVector l = run.lm->next_token_logits(tape, z, b.token_ids).value().row(0);
    const bool lm_yes = l(Tokenizer::kYes) >= l(Tokenizer::kNo);
    const bool cls_yes = 1.0 / (1.0 + std::exp(-f.logit.scalar())) >= 0.5;
    agree[k] = lm_yes == cls_yes;
  });
  double n = 0.0;
  for (char a : agree) n += a;
  return rows.empty() ? 0.0 : n / static_cast<double>(rows.size());
}

void build_structures(RunArtifacts& run) {
  const int latent_id = run.header.relations.latent_id();
  run.latent.assign(run.graphs.size(), {});
  if (run.config.ablation.no_latent_learning) {
    run.enriched = run.graphs;
    run.structures.clear();
    return;
  }
  run.structures = infer_structures(*run.pretext, run.graphs);
  run.enriched.resize(run.graphs.size());
  for (std::size_t i = 0; i < run.graphs.size(); ++i) {
    run.enriched[i] = enrich_graph(run.graphs[i], run.structures[i], latent_id);
    run.latent[i] = latent_pairs(run.graphs[i], run.structures[i]);
  }
}

}  // namespace

std::unique_ptr<RunArtifacts> run_pipeline(const Corpus& corpus, const RunConfig& cfg, const std::string& out_dir,
                                           const ProgressFn& progress) {
  cfg.validate();
  check_corpus(corpus);
  auto emit = [&](RunArtifacts& run, const std::string& line) {
    run.log_lines.push_back(line);
    if (progress) progress(line);
  };

  auto run = std::make_unique<RunArtifacts>();
  run->config = cfg;
  run->header = corpus.header;
  const Rng root(cfg.seed);
  Rng split_rng = root.stream("split");
  run->split = stratified_split(corpus.graphs, cfg.split_train, cfg.split_val, split_rng);
  if (run->split.train.empty() || run->split.test.empty()) throw DataError("small-corpus", "too few graphs to split");
  run->normalizer = FeatureNormalizer::fit(corpus.graphs, run->split.train, corpus.header.numeric_feature_columns);
  run->graphs = corpus.graphs;
  for (auto& g : run->graphs) run->normalizer.apply(g);
  const std::vector<RelationalGraph> train_graphs = subset(run->graphs, run->split.train);

  if (!cfg.ablation.no_latent_learning) {
    Rng init = root.stream("init").stream("pretext");
    run->pretext = std::make_unique<PretextModel>(run->header, cfg.pretext_config(), init);
    Rng pre_rng = root.stream("pretext");
    run->pretext_log = pretrain(*run->pretext, train_graphs, pre_rng).log;
    for (const auto& e : run->pretext_log) emit(*run, pretext_epoch_to_json(e));
  }
  build_structures(*run);

  std::vector<BimodalExample> train_examples;
  for (std::size_t i : run->split.train) train_examples.push_back(run->example(i));

  if (!cfg.ablation.no_llm) {
    Rng init = root.stream("init").stream("lm");
    LmConfig lc = cfg.lm;
    run->lm = std::make_unique<TinyDecoderLM>(build_tokenizer(run->header), lc, init);
    LmWarmConfig wc;
    wc.epochs = cfg.lm_warm_epochs;
    wc.adam.lr = cfg.lm_lr;
    Rng lm_rng = root.stream("lm");
    run->lm_warm_log = warm_train_lm(*run->lm, run->header, train_examples, cfg.k_att, wc, lm_rng);
    for (std::size_t e = 0; e < run->lm_warm_log.size(); ++e)
      emit(*run, json{{"stage", "lm_warmup"}, {"epoch", e + 1}, {"loss", run->lm_warm_log[e]}}.dump());
    run->lm->freeze();
    run->lm_digest_before = run->lm->digest();
  }

  Rng det_init = root.stream("init").stream("detector");
  run->detector = std::make_unique<DetectorModel>(run->header, cfg.detector_config(), det_init);
  if (cfg.warm_start && run->pretext) {
    ParameterRefs src = run->pretext->encoder.parameters();
    ParameterRefs dst = run->detector->encoder.parameters();
    for (std::size_t k = 0; k < std::min(src.size(), dst.size()); ++k)
      if (src[k]->value.rows() == dst[k]->value.rows() && src[k]->value.cols() == dst[k]->value.cols())
        dst[k]->value = src[k]->value;
  }
  if (run->lm) {
    Rng proj_init = root.stream("init").stream("projection");
    run->projection = std::make_unique<ProjectionHead>("projection", cfg.d, cfg.lm.d_lm, proj_init);
  }
  Rng bi_rng = root.stream("bimodal");
  ProjectionHead unused("projection", 1, 1, bi_rng);
  run->bimodal_log = train_bimodal(*run->detector, run->projection ? *run->projection : unused, run->lm.get(),
                                   run->header, train_examples, cfg.bimodal_config(), bi_rng);
  for (const auto& e : run->bimodal_log) emit(*run, bimodal_epoch_to_json(e));
  if (run->lm) {
    run->lm_digest_after = run->lm->digest();
    if (run->lm_digest_after != run->lm_digest_before) throw TrainingError("language model digest changed");
  }

  run->test_report = *evaluate(*run, run->split.test, false);
  run->val_report = evaluate(*run, run->split.val, true);
  if (run->lm) run->lm_agreement = lm_agreement(*run, run->split.test);
  json eval{{"stage", "eval"}, {"split", "test"}, {"report", json::parse(report_to_json(run->test_report))}};
  if (run->lm_agreement) eval["lm_classifier_agreement"] = *run->lm_agreement;
  emit(*run, eval.dump());

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    json split_ids;
    for (const auto& [name, rows] : {std::pair{"train", &run->split.train}, std::pair{"val", &run->split.val},
                                     std::pair{"test", &run->split.test}}) {
      json ids = json::array();
      for (std::size_t i : *rows) ids.push_back(run->graphs[i].respondent_id);
      split_ids[name] = ids;
    }
    json meta{{"format", "lami-run"},
              {"version", 1},
              {"codebook_id", run->header.codebook_id},
              {"config", json::parse(run_config_to_json(cfg))},
              {"normalizer", normalizer_json(run->normalizer)},
              {"split", split_ids}};
    if (run->lm) {
      meta["lm_digest_before"] = run->lm_digest_before;
      meta["lm_digest_after"] = run->lm_digest_after;
    }
    write_text(dir / "run.json", meta.dump(2) + "\n");
    if (run->pretext) save_checkpoint((dir / "pretext.ckpt").string(), run_config_to_json(cfg), run->pretext->parameters());
    save_checkpoint((dir / "detector.ckpt").string(), run_config_to_json(cfg), detector_and_projection(*run));
    if (run->lm) save_checkpoint((dir / "lm.ckpt").string(), lm_metadata(*run->lm), run->lm->parameters());
    std::string log;
    for (const auto& l : run->log_lines) log += l + "\n";
    write_text(dir / "log.jsonl", log);
    if (!run->structures.empty()) {
      std::string s;
      for (std::size_t i = 0; i < run->graphs.size(); ++i) s += structure_to_json(run->graphs[i], run->structures[i]) + "\n";
      write_text(dir / "structures.jsonl", s);
    }
    write_text(dir / "report.json", report_to_json(run->test_report) + "\n");
    write_text(dir / "report.csv", report_csv_header() + "\n" + report_csv_row(run->test_report) + "\n");
  }
  return run;
}

MultiSeedResult run_seeds(const Corpus& corpus, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                          const std::string& out_dir, const ProgressFn& progress) {
  if (seeds.empty()) throw UsageError("no seeds given");
  MultiSeedResult r;
  for (std::uint64_t s : seeds) {
    RunConfig c = cfg;
    c.seed = s;
    const std::string dir = out_dir.empty() ? "" : (std::filesystem::path(out_dir) / ("seed-" + std::to_string(s))).string();
    auto run = run_pipeline(corpus, c, dir, progress);
    r.seeds.push_back(s);
    r.reports.push_back(run->test_report);
  }
  r.aggregate = aggregate_reports(r.reports);
  if (!out_dir.empty()) {
    write_text(std::filesystem::path(out_dir) / "aggregate.json", aggregate_to_json(r.aggregate) + "\n");
    std::string csv = "seed," + report_csv_header() + "\n";
    for (std::size_t i = 0; i < r.seeds.size(); ++i) csv += std::to_string(r.seeds[i]) + "," + report_csv_row(r.reports[i]) + "\n";
    write_text(std::filesystem::path(out_dir) / "seeds.csv", csv);
  }
  return r;
}

std::string run_sweep(const Corpus& corpus, const RunConfig& cfg, const std::string& parameter,
                      const std::vector<std::string>& values, const ProgressFn& progress) {
  if (values.empty()) throw UsageError("sweep needs at least one value");
  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = cfg;
    set_sweep_parameter(c, parameter, v);
    configs.push_back(c);
  }
  std::string csv = "parameter,value," + report_csv_header() + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto run = run_pipeline(corpus, configs[i], "", progress);
    csv += parameter + "," + values[i] + "," + report_csv_row(run->test_report) + "\n";
  }
  return csv;
}

std::unique_ptr<RunArtifacts> load_run(const Corpus& corpus, const std::string& dir_path) {
  namespace fs = std::filesystem;
  const fs::path dir(dir_path);
  std::ifstream in(dir / "run.json");
  if (!in) throw DataError("io", "cannot read " + (dir / "run.json").string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("run-format", e.what());
  }
  if (meta.value("format", "") != "lami-run") throw DataError("run-format", "not a run directory");
  if (meta.at("codebook_id").get<std::string>() != corpus.header.codebook_id)
    throw DataError("heterogeneous-codebook", "checkpoints were trained on another codebook");
  check_corpus(corpus);

  auto run = std::make_unique<RunArtifacts>();
  run->config = parse_run_config(meta.at("config").dump());
  run->header = corpus.header;
  const json& n = meta.at("normalizer");
  run->normalizer.columns = n.at("columns").get<std::vector<int>>();
  run->normalizer.mean = n.at("mean").get<std::vector<double>>();
  run->normalizer.stddev = n.at("stddev").get<std::vector<double>>();
  run->graphs = corpus.graphs;
  for (auto& g : run->graphs) run->normalizer.apply(g);

  Rng init(0);
  if (!run->config.ablation.no_latent_learning) {
    run->pretext = std::make_unique<PretextModel>(run->header, run->config.pretext_config(), init);
    restore_parameters(load_checkpoint((dir / "pretext.ckpt").string()), run->pretext->parameters());
  }
  build_structures(*run);
  run->detector = std::make_unique<DetectorModel>(run->header, run->config.detector_config(), init);
  if (!run->config.ablation.no_llm) {
    const Checkpoint lm_ckpt = load_checkpoint((dir / "lm.ckpt").string());
    const json lm_meta = json::parse(lm_ckpt.metadata);
    LmConfig lc;
    lc.d_lm = lm_meta.at("d_lm").get<Eigen::Index>();
    lc.n_layers = lm_meta.at("n_layers").get<int>();
    lc.n_heads = lm_meta.at("n_heads").get<int>();
    lc.d_ff = lm_meta.at("d_ff").get<Eigen::Index>();
    run->lm = std::make_unique<TinyDecoderLM>(Tokenizer(lm_meta.at("vocabulary").get<std::vector<std::string>>()), lc, init);
    restore_parameters(lm_ckpt, run->lm->parameters());
    run->lm->freeze();
    run->lm_digest_before = run->lm_digest_after = run->lm->digest();
    run->projection = std::make_unique<ProjectionHead>("projection", run->config.d, lc.d_lm, init);
  }
  restore_parameters(load_checkpoint((dir / "detector.ckpt").string()), detector_and_projection(*run));

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < run->graphs.size(); ++i) index.emplace(run->graphs[i].respondent_id, i);
  for (const auto& [name, rows] : {std::pair{"train", &run->split.train}, std::pair{"val", &run->split.val},
                                   std::pair{"test", &run->split.test}}) {
    for (const auto& id : meta.at("split").at(name)) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw DataError("unknown-respondent", "run split names '" + id.get<std::string>() + "'");
      rows->push_back(it->second);
    }
  }
  return run;
}

EvalReport evaluate_run(RunArtifacts& run, const std::vector<std::size_t>& rows) {
  return *evaluate(run, rows, false);
}

std::vector<Explanation> explain(RunArtifacts& run, const std::vector<std::string>& respondent_ids) {
  if (!run.lm || !run.projection) throw UsageError("explain needs a run trained with the language model");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < run.graphs.size(); ++i) index.emplace(run.graphs[i].respondent_id, i);
  std::vector<std::size_t> rows;
  for (const auto& id : respondent_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown-respondent", "no respondent '" + id + "' in the corpus");
    rows.push_back(it->second);
  }
  GenerationConfig gen;
  gen.max_tokens = run.config.max_tokens;
  std::vector<Explanation> out(rows.size());
  parallel_for(rows.size(), [&](std::size_t k) {
    out[k] = generate_explanation(*run.detector, *run.projection, *run.lm, run.header, run.example(rows[k]),
                                  run.config.k_att, gen);
  });
  return out;
}

RecoveryResult planted_recovery(const std::vector<RelationalGraph>& graphs,
                                const std::vector<LearnedStructure>& structures,
                                const std::vector<std::pair<std::string, std::string>>& planted, int k_sim) {
  if (graphs.size() != structures.size()) throw std::invalid_argument("recovery: graph/structure count mismatch");
  if (planted.empty()) throw std::invalid_argument("recovery: no planted pairs");
  double hits = 0.0;
  double baseline = 0.0;
  double count = 0.0;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    std::map<std::string, Eigen::Index> row;
    const auto questions = graphs[g].question_nodes();
    for (std::size_t i = 0; i < questions.size(); ++i)
      row[graphs[g].nodes[static_cast<std::size_t>(questions[i])].ref] = static_cast<Eigen::Index>(i);
    const LearnedStructure& s = structures[g];
    for (const auto& [a, b] : planted) {
      const Eigen::Index ia = row.at(a);
      const Eigen::Index ib = row.at(b);
      for (const auto& [x, y] : {std::pair{ia, ib}, std::pair{ib, ia}}) {
        hits += s.A(x, y);
        baseline += static_cast<double>(k_sim) / static_cast<double>(s.topic_mask.row(x).count());
        count += 1.0;
      }
    }
  }
  return RecoveryResult{hits / count, baseline / count};
}

}  // namespace lami
