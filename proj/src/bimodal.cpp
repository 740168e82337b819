#include "lami/bimodal.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "lami/errors.hpp"

namespace lami {

ProjectionHead::ProjectionHead(const std::string& name, Eigen::Index d, Eigen::Index d_lm, Rng& rng)
    : w{name + ".w", glorot(d_lm, d, rng), true} {}

Var ProjectionHead::project(Tape& tape, const Var& h_agg) { return ad::matmul_nt(h_agg, tape.param(w)); }

RowVector project_graph_token(const RowVector& h_agg, const Matrix& w) {
  if (h_agg.size() != w.cols()) throw std::invalid_argument("projection: dimension mismatch");
  return h_agg * w.transpose();
}

double bimodal_loss(double l_gen, double l_cls) { return l_gen + l_cls; }
Var bimodal_loss(const Var& l_gen, const Var& l_cls) { return ad::add(l_gen, l_cls); }

namespace {

bool require_label(const RelationalGraph& g) {
  if (!g.label) throw DataError("missing-label", "graph " + g.respondent_id + " is unlabelled");
  return *g.label;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::vector<int> top_questions(const Var& alpha, const std::vector<int>& questions, int k_att) {
  const Vector a = alpha.value().row(0).transpose();
  return select_topk_questions(a, questions, std::min<int>(k_att, static_cast<int>(questions.size())));
}

}  // namespace

BimodalStepLoss bimodal_step(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM* lm,
                             const CorpusHeader& header, const BimodalExample& ex, int k_att, Tape& tape) {
  const RelationalGraph& g = *ex.graph;
  const bool y = require_label(g);
  auto f = detector.forward(tape, g);
  BimodalStepLoss out;
  out.probability = 1.0 / (1.0 + std::exp(-f.logit.scalar()));
  out.l_cls = ad::bce_with_logits(f.logit, y ? 1.0 : 0.0);
  if (lm == nullptr) {
    out.l_bi = out.l_cls;
    return out;
  }
  const PromptBundle bundle =
      textualize(g, header, top_questions(f.alpha, f.questions, k_att), ex.latent, PromptVariant::A, &lm->tokenizer());
  out.l_gen = generation_loss(*lm, tape, projection.project(tape, f.h_agg), bundle.token_ids, y);
  out.l_bi = bimodal_loss(out.l_gen, out.l_cls);
  return out;
}

std::vector<BimodalEpoch> train_bimodal(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM* lm,
                                        const CorpusHeader& header, std::span<const BimodalExample> examples,
                                        const BimodalConfig& cfg, Rng& rng) {
  if (examples.empty()) throw std::invalid_argument("bimodal: no training examples");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("bimodal: invalid batch size or epochs");
  TinyDecoderLM* model_lm = cfg.use_llm ? lm : nullptr;
  if (cfg.use_llm && lm == nullptr) throw std::invalid_argument("bimodal: language model required");
  if (model_lm != nullptr && !model_lm->frozen()) throw TrainingError("bimodal: language model is not frozen");
  const std::uint64_t digest = model_lm != nullptr ? model_lm->digest() : 0;

  ParameterRefs params = detector.parameters();
  if (model_lm != nullptr)
    for (Parameter* p : projection.parameters()) params.push_back(p);
  Adam adam(params, cfg.adam);
  Rng shuffle_rng = rng.stream("shuffle");

  std::vector<BimodalEpoch> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, shuffle_rng);
    BimodalEpoch e;
    e.epoch = epoch;
    e.has_gen = model_lm != nullptr;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<Matrix>> grads(n);
      std::vector<double> gen(n, 0.0), cls(n), bi(n);
      std::vector<char> correct(n);
      parallel_for(n, [&](std::size_t b) {
        const BimodalExample& ex = examples[order[start + b]];
        Tape tape;
        BimodalStepLoss l = bimodal_step(detector, projection, model_lm, header, ex, cfg.k_att, tape);
        if (l.l_gen.valid()) gen[b] = l.l_gen.scalar();
        cls[b] = l.l_cls.scalar();
        bi[b] = l.l_bi.scalar();
        correct[b] = (l.probability >= 0.5) == *ex.graph->label;
        tape.backward(l.l_bi);
        grads[b] = zero_grads(params);
        accumulate_grads(grads[b], tape, params);
      });
      std::vector<Matrix> sum = zero_grads(params);
      for (std::size_t b = 0; b < n; ++b) {
        if (!std::isfinite(bi[b]))
          throw TrainingError("bimodal loss diverged at epoch " + std::to_string(epoch) + " on graph " +
                              examples[order[start + b]].graph->respondent_id);
        for (std::size_t k = 0; k < params.size(); ++k) sum[k] += grads[b][k];
        e.l_gen += gen[b];
        e.l_cls += cls[b];
        e.l_bi += bi[b];
        e.accuracy += correct[b] ? 1.0 : 0.0;
      }
      for (auto& g : sum) g /= static_cast<double>(n);
      adam.step(sum);
    }
    const double count = static_cast<double>(examples.size());
    e.l_gen /= count;
    e.l_cls /= count;
    e.l_bi /= count;
    e.accuracy /= count;
    log.push_back(e);
  }
  if (model_lm != nullptr && model_lm->digest() != digest)
    throw TrainingError("bimodal: language model parameters changed during training");
  return log;
}

std::string bimodal_epoch_to_json(const BimodalEpoch& e) {
  nlohmann::json j{{"stage", "bimodal"}, {"epoch", e.epoch}, {"l_bi", e.l_bi}, {"l_cls", e.l_cls},
                   {"train_accuracy", e.accuracy}};
  if (e.has_gen) j["l_gen"] = e.l_gen;
  return j.dump();
}

Tokenizer build_tokenizer(const CorpusHeader& header) {
  Tokenizer t;
  t.add_text(render_prompt({QaLine{0, "", "q", "a"}}, {{"q", "q"}}, PromptVariant::A));
  t.add_text(kFollowingB);
  t.add_text(templated_rationale(PromptBundle{PromptVariant::B, {QaLine{0, "", "q", "a"}}, {}, {}, "", {}, -1}, true));
  t.add_text(templated_rationale(PromptBundle{PromptVariant::B, {QaLine{0, "", "q", "a"}}, {}, {}, "", {}, -1}, false));
  for (const auto& [id, text] : header.question_text) t.add_text(text);
  for (const Relation& r : header.relations.relations())
    if (r.kind == RelationKind::Answer) t.add_text(r.category);
  return t;
}

std::vector<double> warm_train_lm(TinyDecoderLM& lm, const CorpusHeader& header,
                                  std::span<const BimodalExample> examples, int k_att, const LmWarmConfig& cfg,
                                  Rng& rng) {
  if (lm.frozen()) throw TrainingError("lm: cannot warm-train a frozen model");
  Rng pick_rng = rng.stream("lm-prompts");
  const Tokenizer& tok = lm.tokenizer();
  std::vector<std::vector<int>> sequences;
  for (const BimodalExample& ex : examples) {
    const RelationalGraph& g = *ex.graph;
    const bool y = require_label(g);
    std::vector<int> questions = g.question_nodes();
    for (std::size_t i = questions.size(); i > 1; --i) std::swap(questions[i - 1], questions[pick_rng.index(i)]);
    questions.resize(std::min<std::size_t>(questions.size(), static_cast<std::size_t>(std::max(k_att, 1))));

    PromptBundle a = textualize(g, header, questions, ex.latent, PromptVariant::A, &tok);
    a.token_ids.push_back(y ? Tokenizer::kYes : Tokenizer::kNo);
    a.token_ids.push_back(Tokenizer::kEos);
    sequences.push_back(std::move(a.token_ids));

    PromptBundle b = textualize(g, header, questions, ex.latent, PromptVariant::B, &tok);
    for (int id : tok.encode(templated_rationale(b, y))) b.token_ids.push_back(id);
    b.token_ids.push_back(Tokenizer::kEos);
    sequences.push_back(std::move(b.token_ids));
  }

  ParameterRefs params = lm.parameters();
  Adam adam(params, cfg.adam);
  Rng shuffle_rng = rng.stream("lm-shuffle");
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<Matrix>> grads(n);
      std::vector<double> loss(n);
      parallel_for(n, [&](std::size_t b) {
        Tape tape;
        Var prefix = tape.constant(Matrix::Zero(1, lm.config().d_lm));
        Var l = sequence_loss(lm, tape, prefix, sequences[order[start + b]]);
        loss[b] = l.scalar();
        tape.backward(l);
        grads[b] = zero_grads(params);
        accumulate_grads(grads[b], tape, params);
      });
      std::vector<Matrix> sum = zero_grads(params);
      for (std::size_t b = 0; b < n; ++b) {
        if (!std::isfinite(loss[b])) throw TrainingError("lm warm-up loss diverged");
        for (std::size_t k = 0; k < params.size(); ++k) sum[k] += grads[b][k];
        total += loss[b];
      }
      for (auto& g : sum) g /= static_cast<double>(n);
      adam.step(sum);
    }
    losses.push_back(total / static_cast<double>(sequences.size()));
  }
  return losses;
}

Explanation generate_explanation(DetectorModel& detector, ProjectionHead& projection, TinyDecoderLM& lm,
                                 const CorpusHeader& header, const BimodalExample& ex, int k_att,
                                 const GenerationConfig& gen) {
  const RelationalGraph& g = *ex.graph;
  Tape tape;
  auto f = detector.forward(tape, g);
  Explanation e;
  e.respondent_id = g.respondent_id;
  e.probability = 1.0 / (1.0 + std::exp(-f.logit.scalar()));
  e.predicted_label = e.probability >= 0.5;
  const std::vector<int> selected = top_questions(f.alpha, f.questions, k_att);
  for (int node : selected) {
    std::size_t row = 0;
    while (f.questions[row] != node) ++row;
    e.questions.emplace_back(g.nodes[static_cast<std::size_t>(node)].ref, f.alpha.value()(0, static_cast<Eigen::Index>(row)));
  }
  const PromptBundle bundle = textualize(g, header, selected, ex.latent, PromptVariant::B, &lm.tokenizer());
  e.cues = bundle.cue_ids;
  const Matrix z = project_graph_token(f.h_agg.value().row(0), projection.w.value);
  const Generation out = generate(lm, z, bundle.token_ids, gen);
  e.text = out.text;
  e.truncated = out.truncated;
  e.lm_label = !out.ids.empty() && out.ids.front() == Tokenizer::kYes;
  return e;
}

std::string explanation_to_json(const Explanation& e) {
  nlohmann::json qs = nlohmann::json::array();
  for (const auto& [id, a] : e.questions) qs.push_back({{"question", id}, {"alpha", a}});
  nlohmann::json cues = nlohmann::json::array();
  for (const auto& [a, b] : e.cues) cues.push_back({a, b});
  return nlohmann::json{{"respondent_id", e.respondent_id},
                        {"predicted_label", e.predicted_label},
                        {"probability", e.probability},
                        {"questions", qs},
                        {"cues", cues},
                        {"explanation", e.text},
                        {"lm_label", e.lm_label ? "Yes" : "No"},
                        {"truncated", e.truncated}}
      .dump();
}

}  // namespace lami
