#pragma once

// Hand-built fixtures shared by the unit tests.

#include <string>
#include <vector>

#include "lami/graph.hpp"
#include "lami/ingestion.hpp"

namespace lami::test {

/// Global answer categories c0..c{n-1}; question-topic and LATENT follow.
inline CorpusHeader toy_header(int n_categories, std::size_t d_in, int n_questions = 0) {
  CorpusHeader h;
  h.codebook_id = "toy";
  h.d_in = d_in;
  for (int c = 0; c < n_categories; ++c) h.relations.add_answer("c" + std::to_string(c), "", "c" + std::to_string(c));
  h.relations.seal();
  for (int q = 0; q < n_questions; ++q) h.question_text["q" + std::to_string(q)] = "question number " + std::to_string(q);
  return h;
}

/// User 0, questions 1..Q (ref "q<i>"), topics Q+1..Q+T; question i sits in topic i % T.
inline RelationalGraph toy_graph(const CorpusHeader& h, const std::vector<int>& answers, int n_topics, Rng& rng,
                                 const std::string& id = "r0", bool label = false) {
  RelationalGraph g;
  g.respondent_id = id;
  g.label = label;
  g.codebook_id = h.codebook_id;
  const int Q = static_cast<int>(answers.size());
  const auto d = static_cast<Eigen::Index>(h.d_in);
  auto features = [&] {
    Vector v(d);
    for (Eigen::Index k = 0; k < d; ++k) v(k) = rng.normal();
    return v;
  };
  g.nodes.push_back(Node{0, NodeKind::User, "", features()});
  for (int q = 0; q < Q; ++q) g.nodes.push_back(Node{1 + q, NodeKind::Question, "q" + std::to_string(q), features()});
  for (int t = 0; t < n_topics; ++t)
    g.nodes.push_back(Node{1 + Q + t, NodeKind::Topic, "t" + std::to_string(t), features()});
  const int qt = h.relations.question_topic_id();
  for (int q = 0; q < Q; ++q) {
    g.edges.push_back(Edge{0, 1 + q, answers[static_cast<std::size_t>(q)]});
    g.edges.push_back(Edge{1 + q, 0, answers[static_cast<std::size_t>(q)]});
    g.edges.push_back(Edge{1 + q, 1 + Q + q % n_topics, qt});
    g.edges.push_back(Edge{1 + Q + q % n_topics, 1 + q, qt});
  }
  g.canonicalize();
  return g;
}

/// Small synthetic corpus through the real generator.
inline SynthResult small_synth(int n_graphs, std::uint64_t seed, std::vector<PlantedPair> planted = {},
                               std::vector<LabelTerm> label = {}, int n_questions = 8, int n_topics = 4) {
  SynthSpec s;
  s.n_questions = n_questions;
  s.n_topics = n_topics;
  s.n_answer_categories = 3;
  s.n_graphs = n_graphs;
  s.planted_pairs = std::move(planted);
  s.label_weights = std::move(label);
  s.seed = seed;
  s.d_in = 16;
  return generate_synthetic_corpus(s);
}

}  // namespace lami::test
