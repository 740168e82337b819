#include <doctest.h>

#include <cmath>

#include "lami/errors.hpp"
#include "lami/pretext.hpp"
#include "support.hpp"

using namespace lami;

namespace {

PretextConfig small_config() {
  PretextConfig c;
  c.d = 8;
  c.n_layers = 2;
  c.rgsl.k_sim = 2;
  c.batch_size = 8;
  c.epochs = 3;
  c.adam.lr = 1e-2;
  c.adam.weight_decay = 0.0;
  return c;
}

int count_type(const RelationalGraph& g, int type) {
  int n = 0;
  for (const Edge& e : g.edges) n += e.type == type;
  return n;
}

}  // namespace

TEST_CASE("masking removes one user edge pair deterministically") {
  const auto s = test::small_synth(5, 1);
  const auto& g = s.corpus.graphs[0];
  Rng a(3), b(3);
  const MaskedInstance x = mask_random_user_edge(g, a);
  const MaskedInstance y = mask_random_user_edge(g, b);
  CHECK(x.target_question == y.target_question);
  CHECK(x.graph.edges.size() + 2 == g.edges.size());
  CHECK_FALSE(x.graph.answer_relation(x.target_question).has_value());
  CHECK(*g.answer_relation(x.target_question) == x.target_relation);
  const int masked[] = {x.target_question};
  CHECK(validate_graph(x.graph, masked).ok());
}

TEST_CASE("masking a single-question graph always picks that question") {
  Rng rng(4);
  const auto h = test::toy_header(2, 4);
  const auto g = test::toy_graph(h, {1}, 1, rng);
  for (int i = 0; i < 10; ++i) CHECK(mask_random_user_edge(g, rng).target_question == 1);
}

TEST_CASE("masking is uniform over questions") {
  Rng rng(5);
  const auto h = test::toy_header(2, 4);
  const auto g = test::toy_graph(h, {1, 0, 1, 0}, 2, rng);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 4000; ++i) ++hits[static_cast<std::size_t>(mask_random_user_edge(g, rng).target_question)];
  for (int q = 1; q <= 4; ++q) CHECK(std::abs(hits[static_cast<std::size_t>(q)] - 1000) < 120);
}

TEST_CASE("edge-type loss on hand-computed logits") {
  RowVector sure(3);
  sure << 0.0, 800.0, 0.0;
  CHECK(edge_type_loss(sure, 1) == doctest::Approx(0.0));
  CHECK(std::abs(edge_type_loss(RowVector::Zero(4), 2) - std::log(4.0)) < 1e-12);
  RowVector half(2);
  half << 1.5, 1.5;
  CHECK(std::abs(edge_type_loss(half, 0) - std::log(2.0)) < 1e-12);
  CHECK_THROWS(edge_type_loss(half, 2));
}

TEST_CASE("question-local categories restrict the candidate set") {
  CorpusHeader h;
  h.codebook_id = "local";
  h.d_in = 4;
  h.relations.add_answer("q0=a", "q0", "a");
  h.relations.add_answer("q0=b", "q0", "b");
  h.relations.add_answer("q1=a", "q1", "a");
  h.relations.seal();
  Rng rng(6);
  const auto g = test::toy_graph(h, {0, 2}, 2, rng);
  PretextModel model(h, small_config(), rng);
  CHECK(model.candidate_mask(g, 1).cast<int>().sum() == 2);
  CHECK(model.candidate_mask(g, 2)(0, 2));
  CHECK_FALSE(model.candidate_mask(g, 2)(0, 0));
}

TEST_CASE("the user embedding ignores every question under inflow restriction") {
  const auto s = test::small_synth(3, 2);
  Rng rng(7);
  PretextModel model(s.corpus.header, small_config(), rng);
  Rng mrng(8);
  const MaskedInstance inst = mask_random_user_edge(s.corpus.graphs[0], mrng);
  Tape t0;
  const auto base = model.forward(t0, inst.graph, inst.target_question);
  for (int trial = 0; trial < 5; ++trial) {
    auto g = inst.graph;
    for (auto& n : g.nodes)
      if (n.kind == NodeKind::Question) n.features += Vector::Random(n.features.size());
    Tape t;
    const auto f = model.forward(t, g, inst.target_question);
    CHECK(f.H.value().row(0) == base.H.value().row(0));
  }
}

TEST_CASE("without RGSL, other-topic questions cannot reach the masked logits") {
  const auto s = test::small_synth(3, 3);
  PretextConfig cfg = small_config();
  cfg.use_rgsl = false;
  Rng rng(9);
  PretextModel model(s.corpus.header, cfg, rng);
  const auto& g0 = s.corpus.graphs[0];
  const int target = g0.question_nodes()[0];
  MaskedInstance inst;
  inst.graph = g0;
  std::erase_if(inst.graph.edges, [&](const Edge& e) { return (e.src == 0 && e.dst == target) || (e.src == target && e.dst == 0); });
  const auto topics = g0.question_topics();
  Tape t0;
  const Matrix base = model.forward(t0, inst.graph, target).logits.value();
  int perturbed = 0;
  const auto qs = g0.question_nodes();
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (topics[i] == topics[0]) continue;
    auto g = inst.graph;
    g.nodes[static_cast<std::size_t>(qs[i])].features.array() += 5.0;
    Tape t;
    CHECK(model.forward(t, g, target).logits.value() == base);
    ++perturbed;
  }
  CHECK(perturbed > 0);

  // the same perturbation does reach the target once RGSL links questions
  PretextConfig with = small_config();
  with.rgsl.k_sim = 4;
  Rng rng2(9);
  PretextModel linked(s.corpus.header, with, rng2);
  Tape a;
  const Matrix b0 = linked.forward(a, inst.graph, target).logits.value();
  bool changed = false;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (topics[i] == topics[0]) continue;
    auto g = inst.graph;
    g.nodes[static_cast<std::size_t>(qs[i])].features.array() += 5.0;
    Tape t;
    changed = changed || linked.forward(t, g, target).logits.value() != b0;
  }
  CHECK(changed);
}

TEST_CASE("pretraining is deterministic and lowers the loss") {
  const auto s = test::small_synth(48, 4, {{0, 1, 1.0}, {2, 3, 1.0}});
  PretextConfig cfg = small_config();
  cfg.epochs = 8;
  auto run = [&] {
    Rng init(10);
    PretextModel model(s.corpus.header, cfg, init);
    Rng rng(11);
    return pretrain(model, s.corpus.graphs, rng).log;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == 8);
  CHECK(a.back().loss == b.back().loss);
  CHECK(a.back().loss < a.front().loss);
  for (const auto& e : a) {
    CHECK(e.accuracy >= 0.0);
    CHECK(e.accuracy <= 1.0);
    CHECK(std::abs(e.loss - e.edge_loss - e.penalty) < 1e-12);
  }
}

TEST_CASE("a diverging run raises a training error") {
  const auto s = test::small_synth(4, 5);
  Rng init(12);
  PretextModel model(s.corpus.header, small_config(), init);
  model.head_b.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Rng rng(13);
  CHECK_THROWS_AS(pretrain(model, s.corpus.graphs, rng), TrainingError);
}

TEST_CASE("enrichment adds one latent pair per selected question pair") {
  Rng rng(14);
  const auto h = test::toy_header(2, 4);
  std::vector<int> answers(10, 0);
  const auto g = test::toy_graph(h, answers, 5, rng);
  const int latent = h.relations.latent_id();

  // k = 2, row i picks i+1 and i+2 (mod 10) with no mutual picks: 20 pairs
  LearnedStructure s;
  s.A = Matrix::Zero(10, 10);
  for (int i = 0; i < 10; ++i) {
    s.A(i, (i + 1) % 10) = 1.0;
    s.A(i, (i + 3) % 10) = 1.0;
  }
  s.A_hat = s.A / 2.0;
  const auto e = enrich_graph(g, s, latent);
  CHECK(count_type(e, latent) == 2 * 20);
  CHECK(latent_pairs(g, s).size() == 20);
  CHECK(validate_graph(e).ok());
  for (const Edge& x : g.edges) CHECK(std::find(e.edges.begin(), e.edges.end(), x) != e.edges.end());

  LearnedStructure mutual;
  mutual.A = Matrix::Zero(10, 10);
  mutual.A(0, 1) = mutual.A(1, 0) = 1.0;
  CHECK(count_type(enrich_graph(g, mutual, latent), latent) == 2);
  const auto pairs = latent_pairs(g, mutual);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0] == std::pair{1, 2});

  LearnedStructure wrong;
  wrong.A = Matrix::Zero(3, 3);
  CHECK_THROWS(enrich_graph(g, wrong, latent));
}

TEST_CASE("inferred structures select cross-topic neighbours only") {
  const auto s = test::small_synth(4, 15);
  Rng init(16);
  PretextModel model(s.corpus.header, small_config(), init);
  const auto structures = infer_structures(model, s.corpus.graphs);
  REQUIRE(structures.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto topics = s.corpus.graphs[k].question_topics();
    const Matrix& A = structures[k].A;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      CHECK(A.row(i).sum() == 2.0);
      for (Eigen::Index j = 0; j < A.cols(); ++j)
        if (A(i, j) != 0.0) CHECK(topics[static_cast<std::size_t>(i)] != topics[static_cast<std::size_t>(j)]);
    }
    const auto e = enrich_graph(s.corpus.graphs[k], structures[k], s.corpus.header.relations.latent_id());
    CHECK(validate_graph(e).ok());
  }
}
