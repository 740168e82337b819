// One PASS/FAIL line per acceptance criterion. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lami/bimodal.hpp"
#include "lami/gradcheck.hpp"
#include "lami/ingestion.hpp"
#include "lami/metrics.hpp"
#include "lami/pipeline.hpp"
#include "lami/pretext.hpp"
#include "lami/prompt.hpp"

using namespace lami;

namespace {

enum class Outcome { Pass, Fail, Skip };

struct Result {
  Outcome outcome;
  std::string detail;
};

Result verdict(bool ok, const std::string& detail) { return {ok ? Outcome::Pass : Outcome::Fail, detail}; }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

SynthSpec small_spec(std::uint64_t seed) {
  SynthSpec s;
  s.n_questions = 6;
  s.n_topics = 3;
  s.n_answer_categories = 3;
  s.n_graphs = 4;
  s.planted_pairs = {{0, 1, 0.9}};
  s.seed = seed;
  s.d_in = 12;
  return s;
}

// Q = 20, 4 topics, 500 graphs, three cross-topic pairs at strength 0.9.
SynthSpec recovery_spec() {
  SynthSpec s;
  s.n_questions = 20;
  s.n_topics = 4;
  s.n_answer_categories = 4;
  s.n_graphs = 500;
  s.planted_pairs = {{0, 5, 0.9}, {2, 11, 0.9}, {7, 16, 0.9}};
  s.seed = 2024;
  s.d_in = 32;
  return s;
}

std::vector<std::pair<std::string, std::string>> planted_ids(const SynthSpec& s) {
  auto id = [](int q) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%02d", q + 1);
    return std::string(buf);
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : s.planted_pairs) out.emplace_back(id(p.source), id(p.target));
  return out;
}

PretextConfig recovery_pretext(bool use_rgsl) {
  PretextConfig c;
  c.d = 32;
  c.n_layers = 2;
  c.use_rgsl = use_rgsl;
  c.rgsl.k_sim = 2;
  c.rgsl.lambda_deg = 0.1;
  c.epochs = 30;
  c.batch_size = 16;
  c.adam.lr = 1e-2;
  c.adam.weight_decay = 0.0;
  return c;
}

struct RecoveryRun {
  SynthResult synth;
  std::vector<RelationalGraph> train, held_out;
};

const RecoveryRun& recovery_corpus() {
  static const RecoveryRun run = [] {
    RecoveryRun r{generate_synthetic_corpus(recovery_spec()), {}, {}};
    auto& gs = r.synth.corpus.graphs;
    // Height and weight are z-scored with train-split statistics, as the pipeline does.
    std::vector<std::size_t> fit_rows(400);
    for (std::size_t i = 0; i < fit_rows.size(); ++i) fit_rows[i] = i;
    const FeatureNormalizer norm =
        FeatureNormalizer::fit(gs, fit_rows, r.synth.corpus.header.numeric_feature_columns);
    for (auto& g : gs) norm.apply(g);
    r.train.assign(gs.begin(), gs.begin() + 400);
    r.held_out.assign(gs.begin() + 400, gs.end());
    return r;
  }();
  return run;
}

struct PretextOutcome {
  double accuracy = 0.0;
  double majority = 0.0;
  RecoveryResult recovery;
};

PretextOutcome pretext_outcome(bool use_rgsl) {
  const RecoveryRun& data = recovery_corpus();
  Rng root(7);
  Rng init = root.stream("init");
  PretextModel model(data.synth.corpus.header, recovery_pretext(use_rgsl), init);
  Rng train_rng = root.stream("pretext");
  const auto res = pretrain(model, data.train, train_rng);
  std::fprintf(stderr, "  pretext(rgsl=%d): final epoch loss %.4f acc %.4f\n", use_rgsl, res.log.back().loss,
               res.log.back().accuracy);
  PretextOutcome out;
  Rng eval_rng = root.stream("eval");
  const auto ev = evaluate_pretext(model, data.held_out, data.train, eval_rng);
  out.accuracy = ev.accuracy;
  out.majority = ev.majority_accuracy;
  if (use_rgsl) {
    const auto structures = infer_structures(model, data.held_out);
    out.recovery = planted_recovery(data.held_out, structures, planted_ids(recovery_spec()), model.config().rgsl.k_sim);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Result criterion_gradients() {
  const SynthResult s = generate_synthetic_corpus(small_spec(11));
  const CorpusHeader& h = s.corpus.header;
  const RelationalGraph& g = s.corpus.graphs[0];
  Rng rng(1);
  std::ostringstream detail;
  double worst_strict = 0.0;

  RgcnLayer layer("rgcn", h.relations.size(), static_cast<Eigen::Index>(h.d_in), 5, 0, Activation::Tanh, rng);
  const Matrix X = node_features(g);
  const Matrix target = random_normal(static_cast<Eigen::Index>(g.nodes.size()), 5, rng, 1.0);
  const int user = 0;
  auto r = gradient_check(layer.parameters(), [&](Tape& t) {
    return ad::sum(ad::hadamard(layer.forward(t, g, t.constant(X), std::span<const int>(&user, 1)), t.constant(target)));
  });
  worst_strict = std::max(worst_strict, r.max_rel_error);
  detail << "rgcn " << fmt("%.2e", r.max_rel_error);

  AttentionScorer scorer("scorer", 5, rng);
  ClassifierHead head("head", 5, rng);
  const Matrix Hq = random_normal(6, 5, rng, 1.0);
  const Matrix hu = random_normal(1, 5, rng, 1.0);
  ParameterRefs att = scorer.parameters();
  for (Parameter* p : head.parameters()) att.push_back(p);
  r = gradient_check(att, [&](Tape& t) {
    Var H = t.constant(Hq);
    Var alpha = ad::transpose(ad::row_softmax(ad::transpose(scorer.scores(t, H, t.constant(hu)))));
    return ad::bce_with_logits(head.logit(t, ad::matmul(ad::transpose(alpha), H)), 1.0);
  });
  worst_strict = std::max(worst_strict, r.max_rel_error);
  detail << ", scorer+classifier " << fmt("%.2e", r.max_rel_error);

  Tokenizer tok = build_tokenizer(h);
  LmConfig lc;
  lc.d_lm = 8;
  lc.n_layers = 1;
  lc.n_heads = 2;
  lc.d_ff = 16;
  TinyDecoderLM lm(tok, lc, rng);
  lm.freeze();
  ProjectionHead proj("proj", 5, 8, rng);
  const Matrix h_agg = random_normal(1, 5, rng, 1.0);
  const std::vector<int> ids = tok.encode("Here are the question-answer pairs:\n");
  r = gradient_check(proj.parameters(), [&](Tape& t) {
    return generation_loss(lm, t, proj.project(t, t.constant(h_agg)), ids, true);
  });
  worst_strict = std::max(worst_strict, r.max_rel_error);
  detail << ", projection " << fmt("%.2e", r.max_rel_error);

  PretextConfig pc;
  pc.d = 4;
  pc.n_layers = 2;
  pc.rgsl.k_sim = 2;
  pc.rgsl.output_activation = Activation::Tanh;
  PretextModel model(h, pc, rng);
  Rng mask_rng(3);
  const MaskedInstance inst = mask_random_user_edge(g, mask_rng);
  r = gradient_check(model.parameters(), [&](Tape& t) {
    const auto f = model.forward(t, inst.graph, inst.target_question, StructureMode::Soft);
    return ad::add(ad::cross_entropy(f.logits, {0}, {inst.target_relation}), f.penalty);
  });
  detail << ", rgsl soft path " << fmt("%.2e", r.max_rel_error);
  return verdict(worst_strict < 1e-4 && r.max_rel_error < 1e-3, detail.str());
}

// ---------------------------------------------------------------------------
// 2. Structure recovery

Result criterion_recovery() {
  const PretextOutcome o = pretext_outcome(true);
  const double ratio = o.recovery.precision / o.recovery.baseline;
  return verdict(ratio >= 3.0, "precision " + fmt("%.4f", o.recovery.precision) + ", baseline " +
                                   fmt("%.4f", o.recovery.baseline) + ", ratio " + fmt("%.2f", ratio) +
                                   " (need >= 3)");
}

// ---------------------------------------------------------------------------
// 3. Pretext utility

Result criterion_pretext_utility() {
  const PretextOutcome with = pretext_outcome(true);
  const PretextOutcome without = pretext_outcome(false);
  const double gain = 100.0 * (with.accuracy - without.accuracy);
  return verdict(gain >= 5.0, "masked accuracy " + fmt("%.4f", with.accuracy) + " with RGSL vs " +
                                  fmt("%.4f", without.accuracy) + " without, gain " + fmt("%.2f", gain) +
                                  " points (need >= 5); majority baseline " + fmt("%.4f", with.majority));
}

// ---------------------------------------------------------------------------
// 4. Ablation ordering

SynthSpec ablation_spec() {
  SynthSpec s = recovery_spec();
  s.n_graphs = 400;
  s.seed = 77;
  // the label depends on the planted pairs jointly
  s.label_weights = {{0, 5, 2.5}, {2, 11, 2.5}, {7, 16, 2.5}, {0, -1, 0.5}};
  return s;
}

RunConfig ablation_config() {
  RunConfig c;
  c.d = 16;
  c.n_layers = 2;
  c.k_sim = 2;
  c.k_att = 5;
  c.lr = 1e-2;
  c.weight_decay = 0.0;
  c.pretext_batch = 16;
  c.pretext_epochs = 15;
  c.bimodal_batch = 8;
  c.bimodal_epochs = 15;
  c.lm.d_lm = 16;
  c.lm.n_layers = 1;
  c.lm.n_heads = 2;
  c.lm.d_ff = 32;
  c.lm_warm_epochs = 1;
  c.lm_lr = 3e-3;
  c.max_tokens = 8;
  return c;
}

Result criterion_ablation() {
  const SynthResult s = generate_synthetic_corpus(ablation_spec());
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const RunConfig full = ablation_config();
  RunConfig ablated = full;
  apply_ablation(ablated, "no_latent_learning");
  const auto a = run_seeds(s.corpus, full, seeds);
  const auto b = run_seeds(s.corpus, ablated, seeds);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    std::fprintf(stderr, "  seed %llu: full %.4f, no latent %.4f\n", static_cast<unsigned long long>(seeds[i]),
                 a.reports[i].accuracy, b.reports[i].accuracy);
  return verdict(a.aggregate.accuracy.mean >= b.aggregate.accuracy.mean,
                 "mean accuracy over 5 seeds: full " + fmt("%.4f", a.aggregate.accuracy.mean) + ", without latent " +
                     fmt("%.4f", b.aggregate.accuracy.mean));
}

// ---------------------------------------------------------------------------
// 5. Freeze contract and 6. loss contracts share one small bimodal setup.

struct BimodalSetup {
  SynthResult synth;
  Rng init{5};
  DetectorModel detector;
  ProjectionHead projection;
  std::unique_ptr<TinyDecoderLM> lm;
  std::vector<BimodalExample> examples;

  BimodalSetup()
      : synth([] {
          SynthSpec s = small_spec(12);
          s.n_graphs = 16;
          s.label_weights = {{0, -1, 2.0}};
          return generate_synthetic_corpus(s);
        }()),
        detector(synth.corpus.header, DetectorConfig{8, 2, -1, 3, false}, init),
        projection("proj", 8, 8, init) {
    LmConfig lc;
    lc.d_lm = 8;
    lc.n_layers = 1;
    lc.n_heads = 2;
    lc.d_ff = 16;
    lm = std::make_unique<TinyDecoderLM>(build_tokenizer(synth.corpus.header), lc, init);
    lm->freeze();
    for (const auto& g : synth.corpus.graphs) examples.push_back({&g, {}});
  }
};

Result criterion_freeze() {
  BimodalSetup b;
  const std::uint64_t before = b.lm->digest();
  Tape t;
  const auto step = bimodal_step(b.detector, b.projection, b.lm.get(), b.synth.corpus.header, b.examples[0], 3, t);
  t.backward(step.l_gen);
  bool zero = true;
  for (Parameter* p : b.lm->parameters()) zero = zero && t.grad(*p).isZero(0.0);
  BimodalConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.adam.lr = 1e-2;
  cfg.k_att = 3;
  Rng rng(6);
  train_bimodal(b.detector, b.projection, b.lm.get(), b.synth.corpus.header, b.examples, cfg, rng);
  const std::uint64_t after = b.lm->digest();
  return verdict(zero && before == after, std::string("dL_gen/dLM ") + (zero ? "identically zero" : "NONZERO") +
                                              ", digest " + (before == after ? "unchanged" : "CHANGED"));
}

Result criterion_losses() {
  BimodalSetup b;
  BimodalConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.adam.lr = 1e-2;
  cfg.k_att = 3;
  Rng rng(7);
  const auto log = train_bimodal(b.detector, b.projection, b.lm.get(), b.synth.corpus.header, b.examples, cfg, rng);
  double worst_sum = 0.0;
  for (const auto& e : log) worst_sum = std::max(worst_sum, std::abs(e.l_bi - (e.l_gen + e.l_cls)));

  const int R = b.synth.corpus.header.relations.answer_count();
  const double uniform = edge_type_loss(RowVector::Zero(R), R - 1);
  const double uniform_err = std::abs(uniform - std::log(static_cast<double>(R)));
  return verdict(worst_sum <= 1e-12 && uniform_err <= 1e-9,
                 "max |L_bi - (L_gen + L_cls)| " + fmt("%.2e", worst_sum) + ", |uniform edge loss - ln R| " +
                     fmt("%.2e", uniform_err));
}

// ---------------------------------------------------------------------------
// 7. Isolation invariant

Result criterion_isolation() {
  const SynthResult s = generate_synthetic_corpus(small_spec(13));
  Rng rng(8);
  PretextConfig pc;
  pc.d = 6;
  pc.n_layers = 3;
  pc.rgsl.k_sim = 2;
  PretextModel model(s.corpus.header, pc, rng);
  double worst = 0.0;
  int checks = 0;
  for (const auto& g : s.corpus.graphs) {
    Rng mask_rng(static_cast<std::uint64_t>(checks + 1));
    const MaskedInstance inst = mask_random_user_edge(g, mask_rng);
    Tape t0;
    const RowVector base = model.forward(t0, inst.graph, inst.target_question).H.value().row(0);
    for (int q : inst.graph.question_nodes()) {
      RelationalGraph p = inst.graph;
      p.nodes[static_cast<std::size_t>(q)].features.array() += 3.0 * rng.normal();
      Tape t1;
      const RowVector moved = model.forward(t1, p, inst.target_question).H.value().row(0);
      worst = std::max(worst, (moved - base).cwiseAbs().maxCoeff());
      ++checks;
    }
  }
  return verdict(worst == 0.0, std::to_string(checks) + " question perturbations, max user-embedding change " +
                                   fmt("%.3g", worst));
}

// ---------------------------------------------------------------------------
// 8. Metrics oracle

Result criterion_metrics() {
  Rng rng(9);
  double worst = 0.0;
  bool counts_ok = true;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<double> p(n);
    std::unique_ptr<bool[]> y(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = std::round(rng.uniform() * 10.0) / 10.0;
      y[i] = rng.uniform() < 0.5;
    }
    y[0] = true;
    y[1] = false;
    const auto r = compute_metrics(p, std::span<const bool>(y.get(), n));
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double pairs = 0.0, wins = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pred = p[i] >= 0.5;
      tp += pred && y[i];
      fp += pred && !y[i];
      fn += !pred && y[i];
      tn += !pred && !y[i];
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] && !y[j]) {
          pairs += 1.0;
          wins += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
        }
    }
    counts_ok = counts_ok && r.tp == tp && r.fp == fp && r.fn == fn && r.tn == tn;
    auto f1 = [](double a, double b, double c) { return a + b + c == 0.0 ? 0.0 : 2.0 * a / (2.0 * a + b + c); };
    const double acc = static_cast<double>(tp + tn) / static_cast<double>(n);
    const double prec = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double macro = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
    for (double e : {r.accuracy - acc, r.precision - prec, r.recall - rec, r.f1_macro - macro, r.auc - wins / pairs})
      worst = std::max(worst, std::abs(e));
  }
  return verdict(counts_ok && worst <= 1e-12,
                 std::string("200 instances, confusion ") + (counts_ok ? "exact" : "MISMATCH") + ", max error " +
                     fmt("%.2e", worst));
}

// ---------------------------------------------------------------------------
// 9. Prompt fidelity

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result criterion_prompt() {
  CorpusHeader h;
  h.codebook_id = "golden";
  h.d_in = 2;
  for (const char* c : {"1 - Yes", "2 - No", "3 - Most of them"}) h.relations.add_answer(c, "", c);
  h.relations.seal();
  h.question_text = {{"SMOKE", "EVER SMOKED A CIGARETTE"},
                     {"DRUNK", "HOW MANY SDNTS YOU KNOW GET DRUNK WEEKLY"},
                     {"WORTH", "FELT WORTHLESS NEARLY EVERY DAY"}};
  auto graph = [&](int smoked, int drunk, int worthless) {
    RelationalGraph g;
    g.respondent_id = "case";
    g.codebook_id = "golden";
    const Vector z = Vector::Zero(2);
    g.nodes = {{0, NodeKind::User, "", z},      {1, NodeKind::Question, "SMOKE", z}, {2, NodeKind::Question, "DRUNK", z},
               {3, NodeKind::Question, "WORTH", z}, {4, NodeKind::Topic, "T1", z},       {5, NodeKind::Topic, "T2", z}};
    const int answers[] = {smoked, drunk, worthless};
    const int qt = h.relations.question_topic_id();
    for (int q = 1; q <= 3; ++q) {
      g.edges.push_back({0, q, answers[q - 1]});
      g.edges.push_back({q, 0, answers[q - 1]});
      g.edges.push_back({q, q == 2 ? 5 : 4, qt});
      g.edges.push_back({q == 2 ? 5 : 4, q, qt});
    }
    g.canonicalize();
    return g;
  };
  const std::string dir = LAMI_FIXTURE_DIR;
  int matched = 0;
  matched += textualize(graph(0, 2, 0), h, {2, 1}, {{1, 2}}, PromptVariant::A).text ==
             read_file(dir + "/prompt_a_two_questions.txt");
  matched += textualize(graph(1, 2, 0), h, {3, 1, 2}, {{1, 2}, {2, 3}, {1, 4}}, PromptVariant::B).text ==
             read_file(dir + "/prompt_b_three_questions.txt");
  matched += textualize(graph(1, 2, 0), h, {1}, {{2, 3}}, PromptVariant::A).text ==
             read_file(dir + "/prompt_a_no_cues.txt");
  return verdict(matched == 3, std::to_string(matched) + "/3 golden prompts byte-identical");
}

// ---------------------------------------------------------------------------
// 10. Determinism

Result criterion_determinism() {
  SynthSpec s = small_spec(14);
  s.n_questions = 10;
  s.n_topics = 4;
  s.n_graphs = 80;
  s.label_weights = {{0, 1, 2.0}, {2, -1, 1.0}};
  const SynthResult corpus = generate_synthetic_corpus(s);
  RunConfig c = ablation_config();
  c.d = 8;
  c.pretext_epochs = 3;
  c.bimodal_epochs = 3;
  c.k_att = 4;
  c.seed = 99;
  const auto a = run_pipeline(corpus.corpus, c);
  const auto b = run_pipeline(corpus.corpus, c);
  const bool same = a->test_report == b->test_report && a->lm_agreement == b->lm_agreement;
  return verdict(same, std::string("two seeded runs: EvalReports ") + (same ? "identical" : "DIFFER") +
                           " (accuracy " + fmt("%.4f", a->test_report.accuracy) + ")");
}

// ---------------------------------------------------------------------------
// 11. Replication path over user-supplied microdata

Result criterion_replication() {
  const char* survey = std::getenv("LAMI_YRBS_SURVEY");
  const char* codebook = std::getenv("LAMI_YRBS_CODEBOOK");
  const char* embeddings = std::getenv("LAMI_YRBS_EMBEDDINGS");
  if (survey == nullptr || codebook == nullptr || embeddings == nullptr)
    return {Outcome::Skip, "set LAMI_YRBS_SURVEY, LAMI_YRBS_CODEBOOK and LAMI_YRBS_EMBEDDINGS to run"};
  const Codebook cb = load_codebook(codebook);
  const TextEmbedder emb = TextEmbedder::precomputed(embeddings, cb.d_in);
  const IngestResult r = ingest_records(read_survey_file(survey), cb, emb);
  const GraphStats st = corpus_stats(r.corpus.graphs);
  const bool ok = st.n_graphs == 19931 && st.questions_per_graph == 88.0 && st.topics_per_graph == 17.0;
  return verdict(ok, std::to_string(st.n_graphs) + " graphs, " + fmt("%.2f", st.questions_per_graph) +
                         " questions, " + fmt("%.2f", st.topics_per_graph) + " topics per graph (expected 19931 / 88 / 17)");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Result()>>> criteria = {
      {"gradient correctness", criterion_gradients},
      {"structure recovery", criterion_recovery},
      {"pretext utility", criterion_pretext_utility},
      {"ablation ordering", criterion_ablation},
      {"freeze contract", criterion_freeze},
      {"loss contracts", criterion_losses},
      {"isolation invariant", criterion_isolation},
      {"metrics oracle", criterion_metrics},
      {"prompt fidelity", criterion_prompt},
      {"determinism", criterion_determinism},
      {"replication path", criterion_replication},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto start = std::chrono::steady_clock::now();
    Result r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {Outcome::Fail, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = r.outcome == Outcome::Pass ? "PASS" : r.outcome == Outcome::Fail ? "FAIL" : "SKIP";
    std::printf("%s %2d %s: %s [%.1fs]\n", tag, n, criteria[i].first.c_str(), r.detail.c_str(), secs);
    std::fflush(stdout);
    failures += r.outcome == Outcome::Fail;
  }
  return failures == 0 ? 0 : 1;
}
