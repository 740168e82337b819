#include "lami/pretext.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "lami/errors.hpp"

namespace lami {

MaskedInstance mask_random_user_edge(const RelationalGraph& g, Rng& rng) {
  const std::vector<int> questions = g.question_nodes();
  if (questions.empty()) throw std::invalid_argument("pretext: graph " + g.respondent_id + " has no questions");
  const int u = g.user_node();
  MaskedInstance inst;
  inst.target_question = questions[rng.index(questions.size())];
  const auto rel = g.answer_relation(inst.target_question);
  if (!rel) throw std::invalid_argument("pretext: question already masked");
  inst.target_relation = *rel;
  inst.graph.respondent_id = g.respondent_id;
  inst.graph.label = g.label;
  inst.graph.codebook_id = g.codebook_id;
  inst.graph.nodes = g.nodes;
  for (const Edge& e : g.edges) {
    const bool pair = (e.src == u && e.dst == inst.target_question) || (e.src == inst.target_question && e.dst == u);
    if (!pair) inst.graph.edges.push_back(e);
  }
  return inst;
}

double edge_type_loss(const RowVector& logits, int target) {
  if (target < 0 || target >= logits.size()) throw std::out_of_range("edge_type_loss: target out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(target);
}

PretextModel::PretextModel(const CorpusHeader& header, const PretextConfig& cfg, Rng& init)
    : encoder("pretext.encoder",
              RgcnEncoderConfig{static_cast<Eigen::Index>(header.d_in), cfg.d, header.relations.size(), cfg.n_layers,
                                cfg.n_bases},
              init),
      rgsl("pretext.rgsl", cfg.d, header.relations.answer_count(), cfg.rgsl, init),
      header_(header),
      cfg_(cfg) {
  const int r = header.relations.answer_count();
  if (r < 1) throw std::invalid_argument("pretext: corpus has no answer relations");
  head_w = Parameter{"pretext.head.w", glorot(r, 2 * cfg.d, init), true};
  head_b = Parameter{"pretext.head.b", Matrix::Zero(1, r), true};
}

ParameterRefs PretextModel::parameters() {
  ParameterRefs out = encoder.parameters();
  if (cfg_.use_rgsl)
    for (Parameter* p : rgsl.parameters()) out.push_back(p);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

BoolMatrix PretextModel::candidate_mask(const RelationalGraph& g, int question_node) const {
  const int r = header_.relations.answer_count();
  BoolMatrix m = BoolMatrix::Constant(1, r, true);
  if (!header_.relations.question_local()) return m;
  m.setConstant(false);
  for (int id : header_.relations.answers_for(g.nodes.at(static_cast<std::size_t>(question_node)).ref)) m(0, id) = true;
  return m;
}

PretextModel::Forward PretextModel::forward(Tape& tape, const RelationalGraph& g, int target_question,
                                            StructureMode mode) {
  Forward f;
  const int u = g.user_node();
  std::vector<int> masked;
  if (cfg_.inflow_restriction) masked.push_back(u);
  f.H = encoder.forward(tape, g, masked);
  f.questions = g.question_nodes();
  f.Hq = ad::gather_rows(f.H, f.questions);
  if (cfg_.use_rgsl) {
    std::vector<std::optional<int>> sources;
    sources.reserve(f.questions.size());
    for (int q : f.questions) sources.push_back(g.answer_relation(q));
    auto out = rgsl.forward(tape, f.Hq, g.question_topics(), sources, encoder.last(), mode);
    f.Hq = out.H;
    f.penalty = out.penalty;
    f.structure = std::move(out.structure);
  } else {
    f.penalty = tape.constant(Matrix::Zero(1, 1));
  }
  if (target_question >= 0) {
    int row = -1;
    for (std::size_t i = 0; i < f.questions.size(); ++i)
      if (f.questions[i] == target_question) row = static_cast<int>(i);
    if (row < 0) throw std::invalid_argument("pretext: target is not a question node");
    Var x = ad::concat_cols(ad::gather_rows(f.H, {u}), ad::gather_rows(f.Hq, {row}));
    f.logits = ad::add(ad::matmul_nt(x, tape.param(head_w)), tape.param(head_b));
  }
  return f;
}

LearnedStructure PretextModel::infer_structure(const RelationalGraph& g) {
  if (!cfg_.use_rgsl) throw std::logic_error("pretext: structure inference needs the RGSL layer");
  Tape tape;
  return *forward(tape, g, -1).structure;
}

InstanceLoss instance_loss(PretextModel& model, Tape& tape, const MaskedInstance& inst) {
  auto f = model.forward(tape, inst.graph, inst.target_question);
  const BoolMatrix allowed = model.candidate_mask(inst.graph, inst.target_question);
  InstanceLoss out;
  out.edge = ad::cross_entropy(f.logits, {0}, {inst.target_relation}, &allowed);
  out.total = ad::add(out.edge, f.penalty);
  int best = -1;
  for (Eigen::Index j = 0; j < f.logits.cols(); ++j)
    if (allowed(0, j) && (best < 0 || f.logits.value()(0, j) > f.logits.value()(0, best))) best = static_cast<int>(j);
  out.correct = best == inst.target_relation;
  if (f.structure) out.degree_variance = degree_variance(f.structure->A);
  return out;
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

PretextResult pretrain(PretextModel& model, std::span<const RelationalGraph> graphs, Rng& rng) {
  if (graphs.empty()) throw std::invalid_argument("pretext: empty training corpus");
  const PretextConfig& cfg = model.config();
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("pretext: invalid batch size or epochs");
  Rng mask_rng = rng.stream("masking");
  Rng shuffle_rng = rng.stream("shuffle");
  const ParameterRefs params = model.parameters();
  Adam adam(params, cfg.adam);

  PretextResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<MaskedInstance> instances;
    instances.reserve(graphs.size());
    for (const auto& g : graphs) instances.push_back(mask_random_user_edge(g, mask_rng));
    std::vector<std::size_t> order(graphs.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, shuffle_rng);

    PretextEpoch log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<Matrix>> grads(n);
      std::vector<double> edge(n), total(n), pen(n), dvar(n);
      std::vector<char> correct(n);
      parallel_for(n, [&](std::size_t b) {
        const MaskedInstance& inst = instances[order[start + b]];
        Tape tape;
        InstanceLoss l = instance_loss(model, tape, inst);
        edge[b] = l.edge.scalar();
        total[b] = l.total.scalar();
        pen[b] = total[b] - edge[b];
        correct[b] = l.correct;
        tape.backward(l.total);
        grads[b] = zero_grads(params);
        accumulate_grads(grads[b], tape, params);
        dvar[b] = l.degree_variance;
      });
      std::vector<Matrix> sum = zero_grads(params);
      for (std::size_t b = 0; b < n; ++b) {
        if (!std::isfinite(total[b]))
          throw TrainingError("pretext loss diverged at epoch " + std::to_string(epoch) + " on graph " +
                              instances[order[start + b]].graph.respondent_id);
        for (std::size_t k = 0; k < params.size(); ++k) sum[k] += grads[b][k];
        log.loss += total[b];
        log.edge_loss += edge[b];
        log.penalty += pen[b];
        log.accuracy += correct[b] ? 1.0 : 0.0;
        log.degree_variance += dvar[b];
      }
      for (auto& g : sum) g /= static_cast<double>(n);
      adam.step(sum);
    }
    const double count = static_cast<double>(graphs.size());
    log.loss /= count;
    log.edge_loss /= count;
    log.penalty /= count;
    log.accuracy /= count;
    log.degree_variance /= count;
    result.log.push_back(log);
  }
  return result;
}

PretextEval evaluate_pretext(PretextModel& model, std::span<const RelationalGraph> graphs,
                             std::span<const RelationalGraph> reference, Rng& rng) {
  if (graphs.empty()) throw std::invalid_argument("pretext: empty evaluation corpus");
  std::map<std::string, std::map<int, int>> tally;
  for (const auto& g : reference)
    for (int q : g.question_nodes())
      if (auto r = g.answer_relation(q)) ++tally[g.nodes[static_cast<std::size_t>(q)].ref][*r];
  std::map<std::string, int> majority;
  for (const auto& [qid, counts] : tally) {
    int best = -1;
    int best_n = -1;
    for (const auto& [r, n] : counts)
      if (n > best_n) {
        best = r;
        best_n = n;
      }
    majority[qid] = best;
  }

  Rng mask_rng = rng.stream("masking");
  PretextEval ev;
  for (const auto& g : graphs) {
    const MaskedInstance inst = mask_random_user_edge(g, mask_rng);
    Tape tape;
    InstanceLoss l = instance_loss(model, tape, inst);
    ev.accuracy += l.correct ? 1.0 : 0.0;
    ev.loss += l.edge.scalar();
    auto it = majority.find(g.nodes[static_cast<std::size_t>(inst.target_question)].ref);
    if (it != majority.end() && it->second == inst.target_relation) ev.majority_accuracy += 1.0;
  }
  const double n = static_cast<double>(graphs.size());
  ev.accuracy /= n;
  ev.loss /= n;
  ev.majority_accuracy /= n;
  return ev;
}

std::vector<LearnedStructure> infer_structures(PretextModel& model, std::span<const RelationalGraph> graphs) {
  std::vector<LearnedStructure> out(graphs.size());
  parallel_for(graphs.size(), [&](std::size_t i) { out[i] = model.infer_structure(graphs[i]); });
  return out;
}

std::vector<std::pair<int, int>> latent_pairs(const RelationalGraph& g, const LearnedStructure& s) {
  const std::vector<int> questions = g.question_nodes();
  if (static_cast<Eigen::Index>(questions.size()) != s.A.rows() || s.A.rows() != s.A.cols())
    throw std::invalid_argument("enrich: structure has " + std::to_string(s.A.rows()) + " rows, graph has " +
                                std::to_string(questions.size()) + " questions");
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < questions.size(); ++i)
    for (std::size_t j = i + 1; j < questions.size(); ++j) {
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      if (s.A(a, b) != 0.0 || s.A(b, a) != 0.0) out.emplace_back(questions[i], questions[j]);
    }
  return out;
}

RelationalGraph enrich_graph(const RelationalGraph& g, const LearnedStructure& s, int latent_relation) {
  RelationalGraph out = g;
  for (const auto& [a, b] : latent_pairs(g, s)) {
    out.edges.push_back({a, b, latent_relation});
    out.edges.push_back({b, a, latent_relation});
  }
  out.canonicalize();
  out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
  return out;
}

std::string structure_to_json(const RelationalGraph& g, const LearnedStructure& s) {
  const std::vector<int> questions = g.question_nodes();
  nlohmann::json edges = nlohmann::json::array();
  for (Eigen::Index i = 0; i < s.A.rows(); ++i)
    for (Eigen::Index j = 0; j < s.A.cols(); ++j)
      if (s.A(i, j) != 0.0)
        edges.push_back({{"source", g.nodes[static_cast<std::size_t>(questions[static_cast<std::size_t>(i)])].ref},
                         {"target", g.nodes[static_cast<std::size_t>(questions[static_cast<std::size_t>(j)])].ref},
                         {"score", s.S(i, j)}});
  return nlohmann::json{{"respondent_id", g.respondent_id}, {"edges", edges}}.dump();
}

std::string pretext_epoch_to_json(const PretextEpoch& e) {
  return nlohmann::json{{"stage", "pretext"},          {"epoch", e.epoch},
                        {"loss", e.loss},              {"edge_loss", e.edge_loss},
                        {"penalty", e.penalty},        {"masked_edge_accuracy", e.accuracy},
                        {"degree_variance", e.degree_variance}}
      .dump();
}

}  // namespace lami
