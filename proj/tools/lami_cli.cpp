// lami: command-line entry point for every pipeline stage.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 training failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lami/checkpoint.hpp"
#include "lami/errors.hpp"
#include "lami/ingestion.hpp"
#include "lami/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lami;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("io", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("io", "cannot write " + path.string());
  out << text;
}

std::string stats_json(const Corpus& c) {
  const GraphStats s = corpus_stats(c.graphs);
  return json{{"n_graphs", s.n_graphs},
              {"n_positive", s.n_positive},
              {"n_negative", s.n_negative},
              {"questions_per_graph", s.questions_per_graph},
              {"topics_per_graph", s.topics_per_graph},
              {"unique_relations", s.unique_relations}}
      .dump(2);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

struct RunOptions {
  std::string corpus;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ablations;

  void attach(CLI::App* cmd) {
    cmd->add_option("--corpus", corpus, "Corpus file (JSON lines)")->required();
    cmd->add_option("--config", config, "Run configuration JSON");
    cmd->add_option("--seed", seed, "Root seed, overrides the config");
    cmd->add_option("--ablation", ablations, "no_relation_matrix | no_latent_learning | no_llm")->take_all();
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) cfg.seed = *seed;
    for (const auto& a : ablations) apply_ablation(cfg, a);
    cfg.validate();
    return cfg;
  }
};

std::vector<std::uint64_t> resolve_seeds(const std::string& spec, std::uint64_t base) {
  std::vector<std::uint64_t> seeds;
  try {
    if (spec.find(',') != std::string::npos) {
      for (const auto& s : split_list(spec)) seeds.push_back(std::stoull(s));
    } else {
      const auto n = std::stoull(spec);
      for (std::uint64_t i = 0; i < n; ++i) seeds.push_back(base + i);
    }
  } catch (const std::logic_error&) {
    throw UsageError("--seeds takes a count or a comma-separated list");
  }
  if (seeds.empty()) throw UsageError("--seeds must name at least one seed");
  return seeds;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"LAMI: latent relation mining and bi-modal detection on survey graphs"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted cross-topic pairs");
  std::string synth_spec;
  std::string synth_out;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--spec", synth_spec, "Synthetic spec JSON (defaults when omitted)");
  synth->add_option("--seed", synth_seed, "Generator seed, overrides the seed in --spec");
  synth->add_option("--out", synth_out, "Output directory")->required();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a corpus from survey microdata and a codebook");
  std::string survey;
  std::string codebook;
  std::string ingest_out;
  std::string embeddings;
  char delimiter = ',';
  ingest->add_option("--survey", survey, "Delimited survey file with a header row")->required();
  ingest->add_option("--codebook", codebook, "Codebook JSON")->required();
  ingest->add_option("--out", ingest_out, "Corpus output path")->required();
  ingest->add_option("--embeddings", embeddings, "Precomputed text embeddings (key<TAB>values)");
  ingest->add_option("--delimiter", delimiter, "Field delimiter");

  // stats
  auto* stats = app.add_subcommand("stats", "Print corpus statistics");
  std::string stats_corpus;
  stats->add_option("--corpus", stats_corpus, "Corpus file")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Run the masked edge-type pretext stage only");
  RunOptions pre_opts;
  std::string pre_out;
  pre_opts.attach(pre);
  pre->add_option("--out", pre_out, "Output directory")->required();

  // pipeline / train
  auto* pipe = app.add_subcommand("pipeline", "Pretext, enrichment, bi-modal training and evaluation");
  auto* train = app.add_subcommand("train", "Alias of pipeline for a single seed");
  RunOptions pipe_opts;
  std::string pipe_out;
  std::string seeds_spec;
  for (auto* cmd : {pipe, train}) {
    pipe_opts.attach(cmd);
    cmd->add_option("--out", pipe_out, "Output directory for checkpoints and reports");
  }
  pipe->add_option("--seeds", seeds_spec, "Seed count (from --seed) or comma-separated list");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a finished run");
  std::string eval_corpus;
  std::string eval_ckpt;
  std::string eval_split = "test";
  eval->add_option("--corpus", eval_corpus, "Corpus file")->required();
  eval->add_option("--checkpoints", eval_ckpt, "Run directory")->required();
  eval->add_option("--split", eval_split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));

  // explain
  auto* expl = app.add_subcommand("explain", "Explanation records for respondents");
  std::string expl_corpus;
  std::string expl_ckpt;
  std::string expl_ids;
  expl->add_option("--corpus", expl_corpus, "Corpus file")->required();
  expl->add_option("--checkpoints", expl_ckpt, "Run directory")->required();
  expl->add_option("--ids", expl_ids, "Comma-separated respondent ids")->required();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "One pipeline run per parameter value");
  RunOptions sweep_opts;
  std::string sweep_param;
  std::string sweep_values;
  std::string sweep_out;
  sweep_opts.attach(sweep);
  sweep->add_option("--sweep", sweep_param, "k_sim | k_att | lambda_deg")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("--out", sweep_out, "CSV output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*synth) {
    SynthSpec spec = synth_spec.empty() ? SynthSpec{} : parse_synth_spec(read_file(synth_spec));
    if (synth_seed) spec.seed = *synth_seed;
    spec.validate();
    const SynthResult r = generate_synthetic_corpus(spec);
    const fs::path dir(synth_out);
    fs::create_directories(dir);
    save_corpus((dir / "corpus.jsonl").string(), r.corpus);
    save_codebook((dir / "codebook.json").string(), r.codebook);
    std::ofstream csv(dir / "survey.csv");
    write_survey(csv, r.columns, r.records);
    write_file(dir / "ground_truth.json", r.ground_truth_json + "\n");
    write_file(dir / "spec.json", synth_spec_to_json(spec) + "\n");
    std::cout << stats_json(r.corpus) << "\n";
  } else if (*ingest) {
    const Codebook cb = load_codebook(codebook);
    const TextEmbedder embedder =
        embeddings.empty() ? TextEmbedder::hashing(cb.d_in) : TextEmbedder::precomputed(embeddings, cb.d_in);
    const auto records = read_survey_file(survey, delimiter);
    if (records.empty()) throw DataError("empty-survey", survey + " holds no records");
    const IngestResult r = ingest_records(records, cb, embedder);
    save_corpus(ingest_out, r.corpus);
    json s = json::parse(stats_json(r.corpus));
    s["skipped_age"] = r.skipped_age;
    std::cout << s.dump(2) << "\n";
  } else if (*stats) {
    std::cout << stats_json(load_corpus(stats_corpus)) << "\n";
  } else if (*pre) {
    const RunConfig cfg = pre_opts.resolve();
    const Corpus corpus = load_corpus(pre_opts.corpus);
    const Rng root(cfg.seed);
    Rng split_rng = root.stream("split");
    const Split split = stratified_split(corpus.graphs, cfg.split_train, cfg.split_val, split_rng);
    const FeatureNormalizer norm =
        FeatureNormalizer::fit(corpus.graphs, split.train, corpus.header.numeric_feature_columns);
    std::vector<RelationalGraph> graphs = corpus.graphs;
    for (auto& g : graphs) norm.apply(g);
    std::vector<RelationalGraph> train_graphs;
    std::vector<RelationalGraph> test_graphs;
    for (std::size_t i : split.train) train_graphs.push_back(graphs[i]);
    for (std::size_t i : split.test) test_graphs.push_back(graphs[i]);
    Rng init = root.stream("init").stream("pretext");
    PretextModel model(corpus.header, cfg.pretext_config(), init);
    Rng pre_rng = root.stream("pretext");
    const PretextResult result = pretrain(model, train_graphs, pre_rng);
    std::string log;
    for (const auto& e : result.log) {
      progress(pretext_epoch_to_json(e));
      log += pretext_epoch_to_json(e) + "\n";
    }
    Rng eval_rng = root.stream("pretext-eval");
    const PretextEval ev = evaluate_pretext(model, test_graphs, train_graphs, eval_rng);
    const auto structures = infer_structures(model, graphs);
    const fs::path dir(pre_out);
    fs::create_directories(dir);
    save_checkpoint((dir / "pretext.ckpt").string(), run_config_to_json(cfg), model.parameters());
    write_file(dir / "log.jsonl", log);
    std::string s;
    for (std::size_t i = 0; i < graphs.size(); ++i) s += structure_to_json(graphs[i], structures[i]) + "\n";
    write_file(dir / "structures.jsonl", s);
    const std::string report =
        json{{"accuracy", ev.accuracy}, {"loss", ev.loss}, {"majority_accuracy", ev.majority_accuracy}}.dump(2);
    write_file(dir / "pretext_report.json", report + "\n");
    std::cout << report << "\n";
  } else if (*pipe || *train) {
    const RunConfig cfg = pipe_opts.resolve();
    const Corpus corpus = load_corpus(pipe_opts.corpus);
    if (!seeds_spec.empty()) {
      const MultiSeedResult r = run_seeds(corpus, cfg, resolve_seeds(seeds_spec, cfg.seed), pipe_out, progress);
      std::cout << aggregate_to_json(r.aggregate) << "\n";
    } else {
      auto run = run_pipeline(corpus, cfg, pipe_out, progress);
      std::cout << report_to_json(run->test_report) << "\n";
    }
  } else if (*eval) {
    const Corpus corpus = load_corpus(eval_corpus);
    auto run = load_run(corpus, eval_ckpt);
    const auto& rows = eval_split == "train" ? run->split.train : eval_split == "val" ? run->split.val : run->split.test;
    std::cout << report_to_json(evaluate_run(*run, rows)) << "\n";
  } else if (*expl) {
    const Corpus corpus = load_corpus(expl_corpus);
    auto run = load_run(corpus, expl_ckpt);
    for (const auto& e : explain(*run, split_list(expl_ids))) std::cout << explanation_to_json(e) << "\n";
  } else if (*sweep) {
    const RunConfig cfg = sweep_opts.resolve();
    const Corpus corpus = load_corpus(sweep_opts.corpus);
    const std::string csv = run_sweep(corpus, cfg, sweep_param, split_list(sweep_values), progress);
    if (sweep_out.empty()) {
      std::cout << csv;
    } else {
      write_file(sweep_out, csv);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
