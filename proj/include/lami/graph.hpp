#pragma once

// Relational graph schema shared by every stage.
//
// One respondent becomes one graph: a single User node, one Question node per
// included survey question and one Topic node per topic. Every logical edge is
// stored as two directed edges carrying the same relation id.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lami/tensor.hpp"

namespace lami {

enum class NodeKind { User, Question, Topic };

std::string to_string(NodeKind k);
NodeKind parse_node_kind(const std::string& s);

enum class RelationKind { Answer, QuestionTopic, Latent };

struct Relation {
  int id = 0;
  std::string name;
  RelationKind kind = RelationKind::Answer;
  std::string question_id;  // set for question-local answer categories
  std::string category;     // answer text for Answer relations
};

/// Corpus-global relation ids. Answer relations come first (ids 0..n_answer-1),
/// followed by the question-topic relation and the reserved LATENT relation.
class RelationRegistry {
 public:
  static constexpr const char* kQuestionTopic = "question-topic";
  static constexpr const char* kLatent = "LATENT";

  int add_answer(const std::string& name, const std::string& question_id, const std::string& category);
  /// Appends question-topic and LATENT; no answer relations may follow.
  void seal();

  const Relation& at(int id) const { return relations_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(const std::string& name) const;
  int size() const { return static_cast<int>(relations_.size()); }
  int answer_count() const { return answer_count_; }
  int question_topic_id() const;
  int latent_id() const;
  bool sealed() const { return sealed_; }
  /// True when answer relations are specific to one question.
  bool question_local() const;
  /// Answer relation ids valid for a question.
  std::vector<int> answers_for(const std::string& question_id) const;

  const std::vector<Relation>& relations() const { return relations_; }

  bool operator==(const RelationRegistry& o) const;

 private:
  std::vector<Relation> relations_;
  std::unordered_map<std::string, int> by_name_;
  int answer_count_ = 0;
  bool sealed_ = false;
};

struct Node {
  int id = 0;
  NodeKind kind = NodeKind::Question;
  std::string ref;  // question id or topic id; empty for the user
  Vector features;

  bool operator==(const Node& o) const {
    return id == o.id && kind == o.kind && ref == o.ref && features.size() == o.features.size() &&
           features == o.features;
  }
};

struct Edge {
  int src = 0;
  int dst = 0;
  int type = 0;
  auto operator<=>(const Edge&) const = default;
};

struct RelationalGraph {
  std::string respondent_id;
  std::optional<bool> label;
  std::string codebook_id;
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  int user_node() const;
  std::vector<int> question_nodes() const;
  std::vector<int> topic_nodes() const;
  /// Topic node attached to each question node (parallel to question_nodes()).
  std::vector<int> question_topics() const;
  /// Relation of the user->question edge, or nullopt when masked.
  std::optional<int> answer_relation(int question_node) const;
  std::size_t feature_dim() const;
  /// Sorts edges lexicographically and nodes by id.
  void canonicalize();

  bool operator==(const RelationalGraph& o) const = default;
};

struct Violation {
  std::string code;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(const std::string& code) const;
};

/// Checks every structural invariant. Question node ids in `masked` may lack
/// their user edge pair.
ValidationReport validate_graph(const RelationalGraph& g, std::span<const int> masked = {});

struct GraphStats {
  std::size_t n_graphs = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  double questions_per_graph = 0.0;
  double topics_per_graph = 0.0;
  std::size_t unique_relations = 0;
};

/// Exact counts over a labelled corpus whose graphs share one codebook.
GraphStats corpus_stats(std::span<const RelationalGraph> corpus);

/// Everything a corpus file holds besides the graphs.
struct CorpusHeader {
  std::string codebook_id;
  std::size_t d_in = 0;
  std::vector<int> numeric_feature_columns;  // raw user-feature columns to z-score
  RelationRegistry relations;
  std::map<std::string, std::string> question_text;  // question id -> wording, for prompts
};

struct Corpus {
  CorpusHeader header;
  std::vector<RelationalGraph> graphs;
};

std::string serialize_graph(const RelationalGraph& g);
RelationalGraph deserialize_graph(const std::string& line);

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace lami
