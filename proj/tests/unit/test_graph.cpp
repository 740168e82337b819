#include <doctest.h>

#include <sstream>

#include "lami/errors.hpp"
#include "lami/graph.hpp"
#include "support.hpp"

using namespace lami;

TEST_CASE("relation registry keeps answers dense and reserves LATENT last") {
  RelationRegistry r;
  CHECK(r.add_answer("yes", "", "yes") == 0);
  CHECK(r.add_answer("no", "", "no") == 1);
  CHECK(r.add_answer("yes", "", "yes") == 0);
  r.seal();
  CHECK(r.answer_count() == 2);
  CHECK(r.question_topic_id() == 2);
  CHECK(r.latent_id() == 3);
  CHECK(r.at(r.latent_id()).name == "LATENT");
  CHECK_FALSE(r.question_local());
  CHECK_THROWS(r.add_answer("maybe", "", "maybe"));
}

TEST_CASE("well-formed graph validates cleanly") {
  Rng rng(1);
  const auto h = test::toy_header(2, 4);
  const auto g = test::toy_graph(h, {0, 1}, 1, rng);
  CHECK(g.nodes.size() == 4);
  CHECK(validate_graph(g).ok());
}

TEST_CASE("a second user node is reported") {
  Rng rng(2);
  const auto h = test::toy_header(2, 4);
  auto g = test::toy_graph(h, {0, 1}, 1, rng);
  g.nodes.push_back(Node{4, NodeKind::User, "", Vector::Zero(4)});
  CHECK(validate_graph(g).has("user-count"));
}

TEST_CASE("a question without its topic edge is reported") {
  Rng rng(3);
  const auto h = test::toy_header(2, 4);
  auto g = test::toy_graph(h, {0, 1}, 1, rng);
  const int qt = h.relations.question_topic_id();
  std::erase_if(g.edges, [&](const Edge& e) { return e.type == qt && (e.src == 1 || e.dst == 1); });
  CHECK(validate_graph(g).has("question-topic"));
}

TEST_CASE("self-loops, duplicates and one-way edges are all reported") {
  Rng rng(4);
  const auto h = test::toy_header(2, 4);
  auto g = test::toy_graph(h, {0, 1}, 1, rng);
  auto bad = g;
  bad.edges.push_back(Edge{1, 1, 0});
  CHECK(validate_graph(bad).has("self-loop"));
  bad = g;
  bad.edges.push_back(bad.edges.front());
  CHECK(validate_graph(bad).has("duplicate-edge"));
  bad = g;
  bad.edges.push_back(Edge{1, 2, 0});
  CHECK(validate_graph(bad).has("edge-symmetry"));
  bad = g;
  bad.nodes[2].features = Vector::Zero(3);
  CHECK(validate_graph(bad).has("feature-dim"));
}

TEST_CASE("a masked question may lack its user edge pair") {
  Rng rng(5);
  const auto h = test::toy_header(2, 4);
  auto g = test::toy_graph(h, {0, 1}, 1, rng);
  std::erase_if(g.edges, [](const Edge& e) { return (e.src == 0 && e.dst == 1) || (e.src == 1 && e.dst == 0); });
  CHECK(validate_graph(g).has("question-user"));
  const int masked[] = {1};
  CHECK(validate_graph(g, masked).ok());
}

TEST_CASE("corpus stats count labels exactly") {
  Rng rng(6);
  const auto h = test::toy_header(2, 4);
  std::vector<RelationalGraph> c;
  c.push_back(test::toy_graph(h, {0, 1, 1}, 2, rng, "a", true));
  c.push_back(test::toy_graph(h, {0, 0, 0}, 2, rng, "b", false));
  c.push_back(test::toy_graph(h, {1, 1, 0}, 2, rng, "c", false));
  const GraphStats s = corpus_stats(c);
  CHECK(s.n_graphs == 3);
  CHECK(s.n_positive == 1);
  CHECK(s.n_negative == 2);
  CHECK(s.n_positive + s.n_negative == s.n_graphs);
  CHECK(s.questions_per_graph == 3.0);
  CHECK(s.topics_per_graph == 2.0);
  CHECK(s.unique_relations == 3);
  c[1].codebook_id = "other";
  CHECK_THROWS_AS(corpus_stats(c), DataError);
}

TEST_CASE("serialization round-trips random graphs field for field") {
  Rng rng(7);
  const auto h = test::toy_header(3, 5);
  for (int trial = 0; trial < 25; ++trial) {
    const int Q = 1 + static_cast<int>(rng.index(12));
    const int T = 1 + static_cast<int>(rng.index(4));
    std::vector<int> answers;
    for (int q = 0; q < Q; ++q) answers.push_back(static_cast<int>(rng.index(3)));
    auto g = test::toy_graph(h, answers, T, rng, "r" + std::to_string(trial), rng.uniform() < 0.5);
    if (trial % 3 == 0) g.label.reset();
    const RelationalGraph back = deserialize_graph(serialize_graph(g));
    CHECK(back == g);
    CHECK(serialize_graph(back) == serialize_graph(g));
  }
}

TEST_CASE("corpus files round-trip header and graphs") {
  Rng rng(8);
  Corpus c;
  c.header = test::toy_header(2, 4, 2);
  c.header.numeric_feature_columns = {1, 3};
  c.graphs.push_back(test::toy_graph(c.header, {0, 1}, 2, rng, "x", true));
  std::stringstream ss;
  write_corpus(ss, c);
  const Corpus back = read_corpus(ss);
  CHECK(back.header.codebook_id == "toy");
  CHECK(back.header.relations == c.header.relations);
  CHECK(back.header.numeric_feature_columns == c.header.numeric_feature_columns);
  CHECK(back.header.question_text == c.header.question_text);
  REQUIRE(back.graphs.size() == 1);
  CHECK(back.graphs[0] == c.graphs[0]);
}

TEST_CASE("canonicalize orders edges lexicographically") {
  Rng rng(9);
  const auto h = test::toy_header(2, 4);
  auto g = test::toy_graph(h, {1, 0, 1}, 2, rng);
  std::reverse(g.edges.begin(), g.edges.end());
  g.canonicalize();
  CHECK(std::is_sorted(g.edges.begin(), g.edges.end()));
}
