#include "lami/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lami/errors.hpp"

namespace lami {

using nlohmann::json;

std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::User: return "user";
    case NodeKind::Question: return "question";
    case NodeKind::Topic: return "topic";
  }
  return "question";
}

NodeKind parse_node_kind(const std::string& s) {
  if (s == "user") return NodeKind::User;
  if (s == "question") return NodeKind::Question;
  if (s == "topic") return NodeKind::Topic;
  throw DataError("node-kind", "unknown node kind '" + s + "'");
}

namespace {

std::string relation_kind_name(RelationKind k) {
  switch (k) {
    case RelationKind::Answer: return "answer";
    case RelationKind::QuestionTopic: return "question-topic";
    case RelationKind::Latent: return "latent";
  }
  return "answer";
}

RelationKind parse_relation_kind(const std::string& s) {
  if (s == "answer") return RelationKind::Answer;
  if (s == "question-topic") return RelationKind::QuestionTopic;
  if (s == "latent") return RelationKind::Latent;
  throw DataError("relation-kind", "unknown relation kind '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// RelationRegistry

int RelationRegistry::add_answer(const std::string& name, const std::string& question_id,
                                 const std::string& category) {
  if (sealed_) throw std::logic_error("relation registry is sealed");
  if (name == kQuestionTopic || name == kLatent) throw DataError("relation-name", "reserved relation name '" + name + "'");
  if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;
  const int id = static_cast<int>(relations_.size());
  relations_.push_back(Relation{id, name, RelationKind::Answer, question_id, category});
  by_name_.emplace(name, id);
  ++answer_count_;
  return id;
}

void RelationRegistry::seal() {
  if (sealed_) return;
  for (auto [name, kind] : {std::pair{kQuestionTopic, RelationKind::QuestionTopic}, std::pair{kLatent, RelationKind::Latent}}) {
    const int id = static_cast<int>(relations_.size());
    relations_.push_back(Relation{id, name, kind, "", ""});
    by_name_.emplace(name, id);
  }
  sealed_ = true;
}

std::optional<int> RelationRegistry::find(const std::string& name) const {
  if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;
  return std::nullopt;
}

int RelationRegistry::question_topic_id() const {
  if (!sealed_) throw std::logic_error("relation registry not sealed");
  return answer_count_;
}

int RelationRegistry::latent_id() const {
  if (!sealed_) throw std::logic_error("relation registry not sealed");
  return answer_count_ + 1;
}

bool RelationRegistry::question_local() const {
  return std::any_of(relations_.begin(), relations_.end(),
                     [](const Relation& r) { return r.kind == RelationKind::Answer && !r.question_id.empty(); });
}

std::vector<int> RelationRegistry::answers_for(const std::string& question_id) const {
  std::vector<int> out;
  for (int i = 0; i < answer_count_; ++i) {
    const Relation& r = relations_[static_cast<std::size_t>(i)];
    if (r.question_id.empty() || r.question_id == question_id) out.push_back(i);
  }
  return out;
}

bool RelationRegistry::operator==(const RelationRegistry& o) const {
  if (relations_.size() != o.relations_.size() || sealed_ != o.sealed_) return false;
  for (std::size_t i = 0; i < relations_.size(); ++i) {
    const Relation& a = relations_[i];
    const Relation& b = o.relations_[i];
    if (a.id != b.id || a.name != b.name || a.kind != b.kind || a.question_id != b.question_id ||
        a.category != b.category)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// RelationalGraph

int RelationalGraph::user_node() const {
  for (const Node& n : nodes)
    if (n.kind == NodeKind::User) return n.id;
  throw DataError("user-count", "graph " + respondent_id + " has no user node");
}

std::vector<int> RelationalGraph::question_nodes() const {
  std::vector<int> out;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::Question) out.push_back(n.id);
  return out;
}

std::vector<int> RelationalGraph::topic_nodes() const {
  std::vector<int> out;
  for (const Node& n : nodes)
    if (n.kind == NodeKind::Topic) out.push_back(n.id);
  return out;
}

std::vector<int> RelationalGraph::question_topics() const {
  std::unordered_map<int, int> topic_of;
  for (const Edge& e : edges) {
    if (nodes[static_cast<std::size_t>(e.src)].kind == NodeKind::Question &&
        nodes[static_cast<std::size_t>(e.dst)].kind == NodeKind::Topic)
      topic_of[e.src] = e.dst;
  }
  std::vector<int> out;
  for (int q : question_nodes()) {
    auto it = topic_of.find(q);
    out.push_back(it == topic_of.end() ? -1 : it->second);
  }
  return out;
}

std::optional<int> RelationalGraph::answer_relation(int question_node) const {
  const int u = user_node();
  for (const Edge& e : edges)
    if (e.src == u && e.dst == question_node) return e.type;
  return std::nullopt;
}

std::size_t RelationalGraph::feature_dim() const {
  return nodes.empty() ? 0 : static_cast<std::size_t>(nodes.front().features.size());
}

void RelationalGraph::canonicalize() {
  std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  std::sort(edges.begin(), edges.end());
}

bool ValidationReport::has(const std::string& code) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.code == code; });
}

ValidationReport validate_graph(const RelationalGraph& g, std::span<const int> masked) {
  ValidationReport report;
  auto fail = [&](std::string code, std::string msg) { report.violations.push_back({std::move(code), std::move(msg)}); };

  const int n = static_cast<int>(g.nodes.size());
  int users = 0;
  int user = -1;
  for (int i = 0; i < n; ++i) {
    const Node& node = g.nodes[static_cast<std::size_t>(i)];
    if (node.id != i) fail("node-id", "node at position " + std::to_string(i) + " has id " + std::to_string(node.id));
    if (node.kind == NodeKind::User) {
      ++users;
      user = i;
    }
    if (node.features.size() != g.nodes.front().features.size())
      fail("feature-dim", "node " + std::to_string(i) + " feature dimension differs");
  }
  if (users != 1) fail("user-count", "expected exactly one user node, found " + std::to_string(users));

  std::set<Edge> seen;
  bool edges_in_range = true;
  for (const Edge& e : g.edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
      fail("edge-range", "edge endpoint out of range");
      edges_in_range = false;
      continue;
    }
    if (e.src == e.dst) fail("self-loop", "self-loop on node " + std::to_string(e.src));
    if (!seen.insert(e).second)
      fail("duplicate-edge", "duplicate edge " + std::to_string(e.src) + "->" + std::to_string(e.dst));
  }
  if (!edges_in_range) return report;

  for (const Edge& e : g.edges) {
    if (!seen.count(Edge{e.dst, e.src, e.type}))
      fail("edge-symmetry", "edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " lacks its reverse");
  }

  const std::set<int> masked_set(masked.begin(), masked.end());
  for (const Node& node : g.nodes) {
    if (node.kind != NodeKind::Question) continue;
    int user_edges = 0;
    int topic_edges = 0;
    for (const Edge& e : g.edges) {
      if (e.src != node.id) continue;
      const NodeKind k = g.nodes[static_cast<std::size_t>(e.dst)].kind;
      if (k == NodeKind::User) ++user_edges;
      if (k == NodeKind::Topic) ++topic_edges;
    }
    const int expected_user = masked_set.count(node.id) ? 0 : 1;
    if (user >= 0 && user_edges != expected_user)
      fail("question-user", "question node " + std::to_string(node.id) + " has " + std::to_string(user_edges) +
                                " user edges");
    if (topic_edges != 1)
      fail("question-topic", "question node " + std::to_string(node.id) + " has " + std::to_string(topic_edges) +
                                 " topic edges");
  }
  return report;
}

GraphStats corpus_stats(std::span<const RelationalGraph> corpus) {
  if (corpus.empty()) throw DataError("empty-corpus", "corpus has no graphs");
  GraphStats s;
  std::set<int> relations;
  const std::string& codebook = corpus.front().codebook_id;
  double questions = 0.0;
  double topics = 0.0;
  for (const RelationalGraph& g : corpus) {
    if (g.codebook_id != codebook)
      throw DataError("heterogeneous-codebook", "graph " + g.respondent_id + " was built from a different codebook");
    if (!g.label.has_value()) throw DataError("missing-label", "graph " + g.respondent_id + " is unlabelled");
    ++s.n_graphs;
    if (*g.label) {
      ++s.n_positive;
    } else {
      ++s.n_negative;
    }
    questions += static_cast<double>(g.question_nodes().size());
    topics += static_cast<double>(g.topic_nodes().size());
    for (const Edge& e : g.edges) relations.insert(e.type);
  }
  s.questions_per_graph = questions / static_cast<double>(s.n_graphs);
  s.topics_per_graph = topics / static_cast<double>(s.n_graphs);
  s.unique_relations = relations.size();
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json graph_to_json(const RelationalGraph& g) {
  RelationalGraph c = g;
  c.canonicalize();
  json nodes = json::array();
  for (const Node& n : c.nodes) {
    json x = json::array();
    for (Eigen::Index i = 0; i < n.features.size(); ++i) x.push_back(n.features(i));
    nodes.push_back({{"id", n.id}, {"kind", to_string(n.kind)}, {"ref", n.ref}, {"x", std::move(x)}});
  }
  json edges = json::array();
  for (const Edge& e : c.edges) edges.push_back(json::array({e.src, e.dst, e.type}));
  json j;
  j["respondent_id"] = c.respondent_id;
  j["label"] = c.label ? json(*c.label) : json(nullptr);
  j["codebook_id"] = c.codebook_id;
  j["nodes"] = std::move(nodes);
  j["edges"] = std::move(edges);
  return j;
}

RelationalGraph graph_from_json(const json& j) {
  RelationalGraph g;
  g.respondent_id = j.at("respondent_id").get<std::string>();
  if (!j.at("label").is_null()) g.label = j.at("label").get<bool>();
  g.codebook_id = j.value("codebook_id", "");
  for (const json& jn : j.at("nodes")) {
    Node n;
    n.id = jn.at("id").get<int>();
    n.kind = parse_node_kind(jn.at("kind").get<std::string>());
    n.ref = jn.at("ref").get<std::string>();
    const auto& x = jn.at("x");
    n.features.resize(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) n.features(static_cast<Eigen::Index>(i)) = x[i].get<double>();
    g.nodes.push_back(std::move(n));
  }
  for (const json& je : j.at("edges")) g.edges.push_back(Edge{je.at(0).get<int>(), je.at(1).get<int>(), je.at(2).get<int>()});
  g.canonicalize();
  return g;
}

json header_to_json(const CorpusHeader& h) {
  json rel = json::array();
  for (const Relation& r : h.relations.relations()) {
    rel.push_back({{"id", r.id},
                   {"name", r.name},
                   {"kind", relation_kind_name(r.kind)},
                   {"question", r.question_id},
                   {"category", r.category}});
  }
  return json{{"format", "lami-corpus"},
              {"version", 1},
              {"codebook_id", h.codebook_id},
              {"d_in", h.d_in},
              {"numeric_feature_columns", h.numeric_feature_columns},
              {"question_text", h.question_text},
              {"relations", std::move(rel)}};
}

CorpusHeader header_from_json(const json& j) {
  if (j.value("format", "") != "lami-corpus") throw DataError("corpus-format", "missing lami-corpus header line");
  if (j.value("version", 0) != 1) throw DataError("corpus-format", "unsupported corpus version");
  CorpusHeader h;
  h.codebook_id = j.at("codebook_id").get<std::string>();
  h.d_in = j.at("d_in").get<std::size_t>();
  h.numeric_feature_columns = j.at("numeric_feature_columns").get<std::vector<int>>();
  if (j.contains("question_text")) h.question_text = j.at("question_text").get<std::map<std::string, std::string>>();
  for (const json& r : j.at("relations")) {
    const RelationKind kind = parse_relation_kind(r.at("kind").get<std::string>());
    if (kind == RelationKind::Answer) {
      const int id = h.relations.add_answer(r.at("name").get<std::string>(), r.at("question").get<std::string>(),
                                            r.at("category").get<std::string>());
      if (id != r.at("id").get<int>()) throw DataError("corpus-format", "relation ids must be dense and ordered");
    } else {
      h.relations.seal();
    }
  }
  if (!h.relations.sealed()) throw DataError("corpus-format", "relation list lacks question-topic/LATENT entries");
  return h;
}

}  // namespace

std::string serialize_graph(const RelationalGraph& g) { return graph_to_json(g).dump(); }

RelationalGraph deserialize_graph(const std::string& line) {
  try {
    return graph_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw DataError("corpus-format", e.what());
  }
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << header_to_json(corpus.header).dump() << '\n';
  for (const RelationalGraph& g : corpus.graphs) out << serialize_graph(g) << '\n';
}

Corpus read_corpus(std::istream& in) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      if (!have_header) {
        c.header = header_from_json(json::parse(line));
        have_header = true;
      } else {
        c.graphs.push_back(graph_from_json(json::parse(line)));
      }
    } catch (const json::exception& e) {
      throw DataError("corpus-format", "line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(e.kind(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("corpus-format", "empty corpus file");
  return c;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("io", "cannot write " + path);
  write_corpus(out, corpus);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("io", "cannot read " + path);
  return read_corpus(in);
}

}  // namespace lami
