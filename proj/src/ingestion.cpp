#include "lami/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lami/errors.hpp"

namespace lami {

using nlohmann::json;

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::YRBS: return "YRBS";
    case DatasetKind::NSDUH: return "NSDUH";
    case DatasetKind::SYNTH: return "SYNTH";
  }
  return "SYNTH";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "YRBS") return DatasetKind::YRBS;
  if (s == "NSDUH") return DatasetKind::NSDUH;
  if (s == "SYNTH") return DatasetKind::SYNTH;
  throw DataError("codebook", "unknown dataset_kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Codebook

namespace {

json codebook_json(const Codebook& cb) {
  json topics = json::array();
  for (const auto& t : cb.topics) topics.push_back({{"id", t.id}, {"text", t.text}});
  json questions = json::array();
  for (const auto& q : cb.questions) {
    json flags = json::array();
    if (q.flags.label_source) flags.push_back("label_source");
    if (q.flags.excluded) flags.push_back("excluded");
    if (q.flags.user_feature) flags.push_back("user_feature");
    if (q.flags.numeric_normalized) flags.push_back("numeric_normalized");
    questions.push_back(
        {{"id", q.id}, {"text", q.text}, {"topic", q.topic}, {"categories", q.categories}, {"flags", flags}});
  }
  return json{{"dataset_kind", to_string(cb.dataset_kind)},
              {"local_categories", cb.local_categories},
              {"missing_category", cb.missing_category},
              {"id_field", cb.id_field},
              {"age_field", cb.age_field},
              {"age_values", cb.age_values},
              {"d_in", cb.d_in},
              {"topics", topics},
              {"questions", questions}};
}

}  // namespace

std::string Codebook::id() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(codebook_json(*this).dump())));
  return buf;
}

const CodebookQuestion& Codebook::question(const std::string& qid) const {
  for (const auto& q : questions)
    if (q.id == qid) return q;
  throw DataError("unknown-question", "question '" + qid + "' not in codebook");
}

const CodebookTopic& Codebook::topic(const std::string& tid) const {
  for (const auto& t : topics)
    if (t.id == tid) return t;
  throw DataError("unknown-topic", "topic '" + tid + "' not in codebook");
}

std::vector<const CodebookQuestion*> Codebook::node_questions() const {
  std::vector<const CodebookQuestion*> out;
  for (const auto& q : questions)
    if (q.is_node()) out.push_back(&q);
  return out;
}

std::vector<const CodebookTopic*> Codebook::node_topics() const {
  std::set<std::string> used;
  for (const auto* q : node_questions()) used.insert(q->topic);
  std::vector<const CodebookTopic*> out;
  for (const auto& t : topics)
    if (used.count(t.id)) out.push_back(&t);
  return out;
}

void Codebook::validate() const {
  std::set<std::string> topic_ids;
  for (const auto& t : topics) {
    if (t.text.empty()) throw DataError("codebook", "topic '" + t.id + "' has empty text");
    if (!topic_ids.insert(t.id).second) throw DataError("codebook", "duplicate topic id '" + t.id + "'");
  }
  std::set<std::string> qids;
  for (const auto& q : questions) {
    if (!qids.insert(q.id).second) throw DataError("codebook", "duplicate question id '" + q.id + "'");
    const int roles = int(q.flags.excluded) + int(q.flags.user_feature) + int(q.flags.numeric_normalized) +
                      int(q.flags.label_source);
    if (roles > 1) throw DataError("codebook", "question '" + q.id + "' has conflicting role flags");
    if (q.is_node()) {
      if (!topic_ids.count(q.topic))
        throw DataError("codebook", "question '" + q.id + "' maps to unknown topic '" + q.topic + "'");
      if (q.text.empty()) throw DataError("codebook", "question '" + q.id + "' has empty text");
    }
    if ((q.is_node() || q.flags.user_feature) && q.categories.empty())
      throw DataError("codebook", "question '" + q.id + "' has no answer categories");
    std::set<std::string> cats(q.categories.begin(), q.categories.end());
    if (cats.size() != q.categories.size()) throw DataError("codebook", "question '" + q.id + "' repeats a category");
    if (cats.count(kMissingCategory)) throw DataError("codebook", "category name MISSING is reserved");
  }
  if (node_questions().empty()) throw DataError("codebook", "codebook has no graph questions");
  std::size_t user_dim = 0;
  for (const auto& q : questions) {
    if (q.flags.user_feature) user_dim += q.categories.size();
    if (q.flags.numeric_normalized) user_dim += 1;
  }
  if (user_dim > d_in)
    throw DataError("codebook", "user features need " + std::to_string(user_dim) + " columns but d_in is " +
                                    std::to_string(d_in));
}

Codebook parse_codebook(const std::string& json_text) {
  Codebook cb;
  try {
    const json j = json::parse(json_text);
    cb.dataset_kind = parse_dataset_kind(j.at("dataset_kind").get<std::string>());
    cb.local_categories = j.value("local_categories", true);
    cb.missing_category = j.value("missing_category", true);
    cb.id_field = j.value("id_field", "");
    cb.age_field = j.value("age_field", "");
    if (j.contains("age_values")) cb.age_values = j.at("age_values").get<std::map<std::string, double>>();
    cb.d_in = j.value("d_in", std::size_t{128});
    for (const json& t : j.at("topics")) cb.topics.push_back({t.at("id").get<std::string>(), t.at("text").get<std::string>()});
    for (const json& jq : j.at("questions")) {
      CodebookQuestion q;
      q.id = jq.at("id").get<std::string>();
      q.text = jq.value("text", "");
      q.topic = jq.value("topic", "");
      q.categories = jq.value("categories", std::vector<std::string>{});
      for (const json& f : jq.value("flags", json::array())) {
        const std::string flag = f.get<std::string>();
        if (flag == "label_source") {
          q.flags.label_source = true;
        } else if (flag == "excluded") {
          q.flags.excluded = true;
        } else if (flag == "user_feature") {
          q.flags.user_feature = true;
        } else if (flag == "numeric_normalized") {
          q.flags.numeric_normalized = true;
        } else {
          throw DataError("codebook", "unknown flag '" + flag + "' on question " + q.id);
        }
      }
      cb.questions.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw DataError("codebook", e.what());
  }
  cb.validate();
  return cb;
}

Codebook load_codebook(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("io", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_codebook(ss.str());
}

std::string codebook_to_json(const Codebook& cb) { return codebook_json(cb).dump(2); }

void save_codebook(const std::string& path, const Codebook& cb) {
  std::ofstream out(path);
  if (!out) throw DataError("io", "cannot write " + path);
  out << codebook_to_json(cb) << '\n';
}

RelationRegistry build_relation_registry(const Codebook& cb) {
  RelationRegistry reg;
  for (const auto* q : cb.node_questions()) {
    std::vector<std::string> cats = q->categories;
    if (cb.missing_category) cats.emplace_back(kMissingCategory);
    for (const auto& c : cats) {
      if (cb.local_categories) {
        reg.add_answer(q->id + "=" + c, q->id, c);
      } else {
        reg.add_answer(c, "", c);
      }
    }
  }
  reg.seal();
  return reg;
}

std::vector<int> numeric_feature_columns(const Codebook& cb) {
  int col = 0;
  for (const auto& q : cb.questions)
    if (q.flags.user_feature) col += static_cast<int>(q.categories.size());
  std::vector<int> out;
  for (const auto& q : cb.questions)
    if (q.flags.numeric_normalized) out.push_back(col++);
  return out;
}

// ---------------------------------------------------------------------------
// Records

std::optional<std::size_t> match_category(const std::vector<std::string>& categories, const std::string& value) {
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i] == value) return i;
  const std::string prefix = value + " - ";
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i].rfind(prefix, 0) == 0) return i;
  if (!value.empty() && std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    const unsigned long k = std::stoul(value);
    if (k >= 1 && k <= categories.size()) return k - 1;
  }
  return std::nullopt;
}

std::vector<std::string> label_fields(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::YRBS: {
      std::vector<std::string> f{"QNILLICT"};
      for (int i = 46; i <= 55; ++i) f.push_back("QN" + std::to_string(i));
      return f;
    }
    case DatasetKind::NSDUH: return {"ILLYR"};
    case DatasetKind::SYNTH: return {"LABEL"};
  }
  return {};
}

namespace {

bool is_one(const std::string& v) {
  if (v.empty()) return false;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  return end != v.c_str() && *end == '\0' && x == 1.0;
}

const std::string& field(const Record& r, const std::string& name) {
  auto it = r.find(name);
  if (it == r.end()) throw DataError("missing-field", "record lacks field '" + name + "'");
  return it->second;
}

double parse_number(const std::string& v, const std::string& name) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end == v.c_str() || *end != '\0' || !std::isfinite(x))
    throw DataError("bad-number", "field '" + name + "' is not numeric: '" + v + "'");
  return x;
}

}  // namespace

bool derive_label(const Record& record, DatasetKind kind) {
  bool positive = false;
  for (const auto& name : label_fields(kind)) positive = is_one(field(record, name)) || positive;
  return positive;
}

double respondent_age(const Record& record, const Codebook& cb) {
  const std::string& v = field(record, cb.age_field);
  if (auto it = cb.age_values.find(v); it != cb.age_values.end()) return it->second;
  return parse_number(v, cb.age_field);
}

RelationalGraph build_respondent_graph(const Record& record, const Codebook& cb, const RelationRegistry& relations,
                                       const TextEmbedder& embedder, const std::string& fallback_id) {
  if (embedder.dim() != cb.d_in) throw DataError("embedding-dim", "embedder dimension differs from codebook d_in");
  if (!cb.age_field.empty()) {
    const double age = respondent_age(record, cb);
    if (age < kMinAge || age > kMaxAge)
      throw DataError("age-out-of-range", "respondent age " + std::to_string(age) + " outside [15, 25]");
  }

  RelationalGraph g;
  g.codebook_id = cb.id();
  g.respondent_id = cb.id_field.empty() ? fallback_id : field(record, cb.id_field);
  g.label = derive_label(record, cb.dataset_kind);

  const auto d_in = static_cast<Eigen::Index>(cb.d_in);
  Vector user = Vector::Zero(d_in);
  Eigen::Index col = 0;
  for (const auto& q : cb.questions) {
    if (!q.flags.user_feature) continue;
    const std::string& v = field(record, q.id);
    if (!v.empty()) {
      auto idx = match_category(q.categories, v);
      if (!idx) throw DataError("unknown-category", "answer '" + v + "' not a category of " + q.id);
      user(col + static_cast<Eigen::Index>(*idx)) = 1.0;
    } else if (!cb.missing_category) {
      throw DataError("missing-field", "empty value for user feature " + q.id);
    }
    col += static_cast<Eigen::Index>(q.categories.size());
  }
  for (const auto& q : cb.questions) {
    if (!q.flags.numeric_normalized) continue;
    user(col++) = parse_number(field(record, q.id), q.id);
  }
  g.nodes.push_back(Node{0, NodeKind::User, "", std::move(user)});

  const auto questions = cb.node_questions();
  const auto topics = cb.node_topics();
  std::map<std::string, int> topic_node;
  const int first_topic = 1 + static_cast<int>(questions.size());
  for (std::size_t t = 0; t < topics.size(); ++t) topic_node[topics[t]->id] = first_topic + static_cast<int>(t);

  const int qt = relations.question_topic_id();
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const CodebookQuestion& q = *questions[i];
    const int node = 1 + static_cast<int>(i);
    g.nodes.push_back(Node{node, NodeKind::Question, q.id, embedder.embed(q.text)});

    const std::string& v = field(record, q.id);
    std::string category;
    if (v.empty()) {
      if (!cb.missing_category) throw DataError("missing-field", "empty answer for " + q.id);
      category = kMissingCategory;
    } else {
      auto idx = match_category(q.categories, v);
      if (!idx) throw DataError("unknown-category", "answer '" + v + "' not a category of " + q.id);
      category = q.categories[*idx];
    }
    const auto rel = relations.find(cb.local_categories ? q.id + "=" + category : category);
    if (!rel) throw DataError("unknown-category", "no relation for answer '" + category + "' of " + q.id);
    g.edges.push_back({0, node, *rel});
    g.edges.push_back({node, 0, *rel});
    const int tnode = topic_node.at(q.topic);
    g.edges.push_back({node, tnode, qt});
    g.edges.push_back({tnode, node, qt});
  }
  for (std::size_t t = 0; t < topics.size(); ++t)
    g.nodes.push_back(Node{first_topic + static_cast<int>(t), NodeKind::Topic, topics[t]->id, embedder.embed(topics[t]->text)});
  g.canonicalize();
  return g;
}

// ---------------------------------------------------------------------------
// Delimited text

namespace {

std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string quote(const std::string& v, char delim) {
  if (v.find(delim) == std::string::npos && v.find('"') == std::string::npos && v.find('\n') == std::string::npos)
    return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::vector<Record> read_survey(std::istream& in, char delimiter) {
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw DataError("empty-survey", "survey file has no header row");
  const auto header = split_row(line, delimiter);
  std::vector<Record> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto values = split_row(line, delimiter);
    if (values.size() != header.size())
      throw DataError("survey-format", "line " + std::to_string(lineno) + ": expected " +
                                           std::to_string(header.size()) + " fields, got " +
                                           std::to_string(values.size()));
    Record r;
    for (std::size_t i = 0; i < header.size(); ++i) r[header[i]] = std::move(values[i]);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("empty-survey", "survey file has no data rows");
  return records;
}

std::vector<Record> read_survey_file(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw DataError("io", "cannot read " + path);
  return read_survey(in, delimiter);
}

void write_survey(std::ostream& out, const std::vector<std::string>& columns, const std::vector<Record>& records,
                  char delimiter) {
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? std::string(1, delimiter) : "") << quote(columns[i], delimiter);
  out << '\n';
  for (const Record& r : records) {
    for (std::size_t i = 0; i < columns.size(); ++i)
      out << (i ? std::string(1, delimiter) : "") << quote(r.at(columns[i]), delimiter);
    out << '\n';
  }
}

IngestResult ingest_records(const std::vector<Record>& records, const Codebook& cb, const TextEmbedder& embedder) {
  if (records.empty()) throw DataError("empty-survey", "no survey records");
  IngestResult result;
  const RelationRegistry relations = build_relation_registry(cb);
  result.corpus.header.codebook_id = cb.id();
  result.corpus.header.d_in = cb.d_in;
  result.corpus.header.numeric_feature_columns = numeric_feature_columns(cb);
  result.corpus.header.relations = relations;
  for (const auto* q : cb.node_questions()) result.corpus.header.question_text[q->id] = q->text;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string line = std::to_string(i + 2);
    try {
      if (!cb.age_field.empty()) {
        const double age = respondent_age(records[i], cb);
        if (age < kMinAge || age > kMaxAge) {
          ++result.skipped_age;
          continue;
        }
      }
      result.corpus.graphs.push_back(build_respondent_graph(records[i], cb, relations, embedder, "row" + line));
    } catch (const DataError& e) {
      const std::string what = e.what();
      throw DataError(e.kind(), "line " + line + ": " + what.substr(e.kind().size() + 2));
    }
  }
  if (result.corpus.graphs.empty()) throw DataError("empty-survey", "no respondents aged 15-25");
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

void SynthSpec::validate() const {
  if (n_topics < 2) throw DataError("synth-spec", "n_topics must be at least 2");
  if (n_questions < n_topics) throw DataError("synth-spec", "n_questions must be at least n_topics");
  if (n_answer_categories < 2) throw DataError("synth-spec", "n_answer_categories must be at least 2");
  if (n_graphs < 1) throw DataError("synth-spec", "n_graphs must be positive");
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw DataError("synth-spec", "base_rate must lie in (0, 1)");
  std::set<int> targets;
  for (const auto& p : planted_pairs) {
    if (p.source < 0 || p.source >= n_questions || p.target < 0 || p.target >= n_questions)
      throw DataError("synth-spec", "planted pair index out of range");
    if (topic_of(p.source) == topic_of(p.target))
      throw DataError("synth-spec", "planted pair " + std::to_string(p.source) + "-" + std::to_string(p.target) +
                                        " lies within one topic");
    if (!(p.strength > 0.0 && p.strength <= 1.0)) throw DataError("synth-spec", "planted strength must lie in (0, 1]");
    if (!targets.insert(p.target).second) throw DataError("synth-spec", "a question may be a planted target only once");
  }
  for (const auto& t : label_weights) {
    if (t.a < 0 || t.a >= n_questions || t.b >= n_questions) throw DataError("synth-spec", "label term index out of range");
  }
}

SynthSpec parse_synth_spec(const std::string& json_text) {
  SynthSpec s;
  try {
    const json j = json::parse(json_text);
    s.n_questions = j.value("n_questions", s.n_questions);
    s.n_topics = j.value("n_topics", s.n_topics);
    s.n_answer_categories = j.value("n_answer_categories", s.n_answer_categories);
    s.n_graphs = j.value("n_graphs", s.n_graphs);
    s.base_rate = j.value("base_rate", s.base_rate);
    s.seed = j.value("seed", s.seed);
    s.d_in = j.value("d_in", s.d_in);
    for (const json& p : j.value("planted_pairs", json::array()))
      s.planted_pairs.push_back({p.at("source").get<int>(), p.at("target").get<int>(), p.value("strength", 1.0)});
    for (const json& t : j.value("label_weights", json::array()))
      s.label_weights.push_back({t.at("a").get<int>(), t.value("b", -1), t.at("weight").get<double>()});
  } catch (const json::exception& e) {
    throw DataError("synth-spec", e.what());
  }
  s.validate();
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.planted_pairs) pairs.push_back({{"source", p.source}, {"target", p.target}, {"strength", p.strength}});
  json terms = json::array();
  for (const auto& t : s.label_weights) terms.push_back({{"a", t.a}, {"b", t.b}, {"weight", t.weight}});
  return json{{"n_questions", s.n_questions},     {"n_topics", s.n_topics},
              {"n_answer_categories", s.n_answer_categories},
              {"n_graphs", s.n_graphs},           {"planted_pairs", pairs},
              {"label_weights", terms},           {"base_rate", s.base_rate},
              {"seed", s.seed},                   {"d_in", s.d_in}}
      .dump(2);
}

double answer_encoding(int answer, int n_categories) {
  return 2.0 * static_cast<double>(answer) / static_cast<double>(n_categories - 1) - 1.0;
}

namespace {

const char* const kWords[] = {
    "sleep",   "school",  "friends", "family",  "sports",  "music",   "money",   "homework", "parents", "teachers",
    "phone",   "games",   "dinner",  "church",  "work",    "driving", "weekend", "party",    "bullying", "stress",
    "grades",  "exercise", "dentist", "weight", "mood",    "anger",   "fights",  "helmet",   "seatbelt", "texting",
    "smoking", "vaping",  "drinking", "dating", "safety",  "police",  "neighbors", "siblings", "breakfast", "soda",
    "fruit",   "vegetables", "screen", "reading", "worry",  "sadness", "hope",    "support",  "rules",   "curfew",
    "shopping", "travel",  "pets",    "chores",  "club",    "team",    "coach",   "library",  "bus",     "bike"};
constexpr std::size_t kNumWords = sizeof(kWords) / sizeof(kWords[0]);

std::vector<std::string> answer_names(int c) {
  static const std::vector<std::vector<std::string>> named = {
      {"never", "often"}, {"never", "sometimes", "often"}, {"never", "rarely", "sometimes", "often"},
      {"never", "rarely", "sometimes", "often", "always"}};
  if (c >= 2 && c <= 5) return named[static_cast<std::size_t>(c - 2)];
  std::vector<std::string> out;
  for (int i = 0; i < c; ++i) out.push_back("level " + std::to_string(i + 1));
  return out;
}

std::string two_digit(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", i);
  return buf;
}

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SynthResult generate_synthetic_corpus(const SynthSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  const int Q = spec.n_questions;
  const int C = spec.n_answer_categories;

  SynthResult out;
  Codebook& cb = out.codebook;
  cb.dataset_kind = DatasetKind::SYNTH;
  cb.local_categories = false;
  cb.missing_category = false;
  cb.id_field = "respondent_id";
  cb.age_field = "AGE";
  cb.d_in = spec.d_in;

  Rng text_rng = root.stream("texts");
  for (int t = 0; t < spec.n_topics; ++t)
    cb.topics.push_back({"T" + std::to_string(t + 1), "topic " + std::to_string(t + 1) + " " + kWords[text_rng.index(kNumWords)]});

  cb.questions.push_back({"SEX", "sex", "", {"female", "male"}, {false, false, true, false}});
  cb.questions.push_back({"GRADE", "grade", "", {"9", "10", "11", "12", "ungraded"}, {false, false, true, false}});
  cb.questions.push_back({"HEIGHT", "height in meters", "", {}, {false, false, false, true}});
  cb.questions.push_back({"WEIGHT", "weight in kilograms", "", {}, {false, false, false, true}});
  cb.questions.push_back({"LABEL", "illicit drug use", "", {"0", "1"}, {true, false, false, false}});
  const auto names = answer_names(C);
  std::vector<std::string> qids;
  for (int q = 0; q < Q; ++q) {
    std::string text = "item " + std::to_string(q + 1);
    for (int w = 0; w < 3; ++w) text += std::string(" ") + kWords[text_rng.index(kNumWords)];
    qids.push_back("S" + two_digit(q + 1));
    cb.questions.push_back({qids.back(), text, "T" + std::to_string(spec.topic_of(q) + 1), names, {}});
  }
  cb.validate();

  // skewed marginals so the majority answer carries information
  Rng marg_rng = root.stream("marginals");
  std::vector<std::vector<double>> marginals(static_cast<std::size_t>(Q));
  for (auto& m : marginals) {
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      double u = marg_rng.uniform();
      while (u <= 0.0) u = marg_rng.uniform();
      m.push_back(-std::log(u));
      z += m.back();
    }
    for (double& p : m) p /= z;
  }

  // resolve sampling order: independent questions first, then planted targets
  std::vector<int> source_of(static_cast<std::size_t>(Q), -1);
  std::vector<double> strength_of(static_cast<std::size_t>(Q), 0.0);
  std::vector<int> shift_of(static_cast<std::size_t>(Q), 0);
  Rng shift_rng = root.stream("shifts");
  for (const auto& p : spec.planted_pairs) {
    source_of[static_cast<std::size_t>(p.target)] = p.source;
    strength_of[static_cast<std::size_t>(p.target)] = p.strength;
    shift_of[static_cast<std::size_t>(p.target)] = static_cast<int>(shift_rng.index(static_cast<std::size_t>(C)));
  }
  std::vector<int> order;
  std::vector<bool> placed(static_cast<std::size_t>(Q), false);
  for (int q = 0; q < Q; ++q) {
    if (source_of[static_cast<std::size_t>(q)] < 0) {
      order.push_back(q);
      placed[static_cast<std::size_t>(q)] = true;
    }
  }
  for (bool progress = true; progress && static_cast<int>(order.size()) < Q;) {
    progress = false;
    for (int q = 0; q < Q; ++q) {
      if (!placed[static_cast<std::size_t>(q)] && placed[static_cast<std::size_t>(source_of[static_cast<std::size_t>(q)])]) {
        order.push_back(q);
        placed[static_cast<std::size_t>(q)] = true;
        progress = true;
      }
    }
  }
  if (static_cast<int>(order.size()) != Q) throw DataError("synth-spec", "planted pairs form a cycle");

  Rng answer_rng = root.stream("answers");
  out.answers.assign(static_cast<std::size_t>(spec.n_graphs), std::vector<int>(static_cast<std::size_t>(Q), 0));
  for (auto& a : out.answers) {
    for (int q : order) {
      const auto qs = static_cast<std::size_t>(q);
      const double u = answer_rng.uniform();
      const int drawn = sample_categorical(marginals[qs], answer_rng);
      if (source_of[qs] >= 0 && u < strength_of[qs]) {
        a[qs] = (a[static_cast<std::size_t>(source_of[qs])] + shift_of[qs]) % C;
      } else {
        a[qs] = drawn;
      }
    }
  }

  std::vector<double> scores;
  for (const auto& a : out.answers) {
    double z = 0.0;
    for (const auto& t : spec.label_weights) {
      double term = answer_encoding(a[static_cast<std::size_t>(t.a)], C);
      if (t.b >= 0) term *= answer_encoding(a[static_cast<std::size_t>(t.b)], C);
      z += t.weight * term;
    }
    scores.push_back(z);
  }
  auto mean_rate = [&](double bias) {
    double s = 0.0;
    for (double z : scores) s += sigmoid(bias + z);
    return s / static_cast<double>(scores.size());
  };
  double lo = -30.0;
  double hi = 30.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_rate(mid) < spec.base_rate ? lo : hi) = mid;
  }
  out.label_bias = 0.5 * (lo + hi);
  if (std::abs(mean_rate(out.label_bias) - spec.base_rate) > 0.05)
    throw DataError("infeasible-base-rate", "label weights cannot reach base rate " + std::to_string(spec.base_rate));

  Rng label_rng = root.stream("labels");
  Rng demo_rng = root.stream("demographics");
  out.columns = {"respondent_id", "AGE", "SEX", "GRADE", "HEIGHT", "WEIGHT", "LABEL"};
  for (const auto& id : qids) out.columns.push_back(id);
  for (int g = 0; g < spec.n_graphs; ++g) {
    Record r;
    char id[32];
    std::snprintf(id, sizeof(id), "s%06d", g + 1);
    r["respondent_id"] = id;
    r["AGE"] = std::to_string(15 + static_cast<int>(demo_rng.index(11)));
    r["SEX"] = demo_rng.uniform() < 0.5 ? "female" : "male";
    r["GRADE"] = std::to_string(9 + static_cast<int>(demo_rng.index(4)));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", demo_rng.normal(1.70, 0.10));
    r["HEIGHT"] = buf;
    std::snprintf(buf, sizeof(buf), "%.1f", demo_rng.normal(65.0, 12.0));
    r["WEIGHT"] = buf;
    const bool label = label_rng.uniform() < sigmoid(out.label_bias + scores[static_cast<std::size_t>(g)]);
    r["LABEL"] = label ? "1" : "0";
    for (int q = 0; q < Q; ++q) r[qids[static_cast<std::size_t>(q)]] = names[static_cast<std::size_t>(out.answers[static_cast<std::size_t>(g)][static_cast<std::size_t>(q)])];
    out.records.push_back(std::move(r));
  }

  out.corpus = ingest_records(out.records, cb, TextEmbedder::hashing(spec.d_in)).corpus;

  json pairs = json::array();
  for (const auto& p : spec.planted_pairs) {
    pairs.push_back({{"source", qids[static_cast<std::size_t>(p.source)]},
                     {"target", qids[static_cast<std::size_t>(p.target)]},
                     {"source_index", p.source},
                     {"target_index", p.target},
                     {"strength", p.strength},
                     {"shift", shift_of[static_cast<std::size_t>(p.target)]}});
  }
  json terms = json::array();
  for (const auto& t : spec.label_weights) {
    json term{{"a", qids[static_cast<std::size_t>(t.a)]}, {"weight", t.weight}};
    if (t.b >= 0) term["b"] = qids[static_cast<std::size_t>(t.b)];
    terms.push_back(term);
  }
  out.ground_truth_json =
      json{{"planted_pairs", pairs},
           {"label_function",
            {{"link", "logistic"},
             {"bias", out.label_bias},
             {"encoding", "2*answer_index/(n_categories-1) - 1"},
             {"terms", terms}}},
           {"topic_assignment", "round-robin: question index mod n_topics"}}
          .dump(2);
  return out;
}

}  // namespace lami
