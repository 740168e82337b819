#pragma once

// Survey microdata -> relational graph corpora.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lami/graph.hpp"
#include "lami/text_embed.hpp"

namespace lami {

enum class DatasetKind { YRBS, NSDUH, SYNTH };

std::string to_string(DatasetKind k);
DatasetKind parse_dataset_kind(const std::string& s);

struct QuestionFlags {
  bool label_source = false;
  bool excluded = false;
  bool user_feature = false;       // categorical, one-hot into the user node
  bool numeric_normalized = false;  // numeric, z-scored into the user node
};

struct CodebookQuestion {
  std::string id;
  std::string text;
  std::string topic;  // required for questions that become graph nodes
  std::vector<std::string> categories;
  QuestionFlags flags;

  /// Included as a Question node.
  bool is_node() const {
    return !flags.label_source && !flags.excluded && !flags.user_feature && !flags.numeric_normalized;
  }
};

struct CodebookTopic {
  std::string id;
  std::string text;
};

struct Codebook {
  DatasetKind dataset_kind = DatasetKind::SYNTH;
  bool local_categories = true;    // answer relations are question-specific
  bool missing_category = true;    // empty answers map to a reserved MISSING category
  std::string id_field;            // respondent id column; row number when empty
  std::string age_field;           // empty disables the age filter
  std::map<std::string, double> age_values;  // category -> age in years; numeric parse otherwise
  std::size_t d_in = 128;
  std::vector<CodebookTopic> topics;
  std::vector<CodebookQuestion> questions;

  /// Stable digest of the codebook contents.
  std::string id() const;
  const CodebookQuestion& question(const std::string& id) const;
  const CodebookTopic& topic(const std::string& id) const;
  std::vector<const CodebookQuestion*> node_questions() const;
  /// Topics that own at least one node question, in codebook order.
  std::vector<const CodebookTopic*> node_topics() const;
  /// Throws DataError when an invariant fails.
  void validate() const;
};

inline constexpr const char* kMissingCategory = "MISSING";
inline constexpr double kMinAge = 15.0;
inline constexpr double kMaxAge = 25.0;

Codebook load_codebook(const std::string& path);
Codebook parse_codebook(const std::string& json_text);
std::string codebook_to_json(const Codebook& cb);
void save_codebook(const std::string& path, const Codebook& cb);

/// Answer relations for every node question, then question-topic and LATENT.
RelationRegistry build_relation_registry(const Codebook& cb);

/// Raw user-feature layout: one-hot blocks, then numeric columns, zero-padded to d_in.
std::vector<int> numeric_feature_columns(const Codebook& cb);

using Record = std::map<std::string, std::string>;

/// Index of an answer value within a category list. Matches the full category
/// string or its code prefix ("1" matches "1 - Yes").
std::optional<std::size_t> match_category(const std::vector<std::string>& categories, const std::string& value);

/// YRBS: any of QNILLICT, QN46..QN55 equals 1. NSDUH: ILLYR equals 1. SYNTH: LABEL equals 1.
bool derive_label(const Record& record, DatasetKind kind);
std::vector<std::string> label_fields(DatasetKind kind);

double respondent_age(const Record& record, const Codebook& cb);

RelationalGraph build_respondent_graph(const Record& record, const Codebook& cb, const RelationRegistry& relations,
                                       const TextEmbedder& embedder, const std::string& fallback_id = "");

/// Reads a delimited file with a header row.
std::vector<Record> read_survey(std::istream& in, char delimiter = ',');
std::vector<Record> read_survey_file(const std::string& path, char delimiter = ',');
void write_survey(std::ostream& out, const std::vector<std::string>& columns, const std::vector<Record>& records,
                  char delimiter = ',');

struct IngestResult {
  Corpus corpus;
  std::size_t skipped_age = 0;
};

/// Builds a corpus, dropping respondents outside the 15-25 age range. Other
/// record errors propagate with the 1-based data line number.
IngestResult ingest_records(const std::vector<Record>& records, const Codebook& cb, const TextEmbedder& embedder);

// ---------------------------------------------------------------------------
// Synthetic corpora with planted cross-topic dependencies.

struct PlantedPair {
  int source = 0;
  int target = 0;
  double strength = 1.0;
};

struct LabelTerm {
  int a = 0;
  int b = -1;  // -1 for a main effect
  double weight = 0.0;
};

struct SynthSpec {
  int n_questions = 20;
  int n_topics = 4;
  int n_answer_categories = 4;
  int n_graphs = 200;
  std::vector<PlantedPair> planted_pairs;
  std::vector<LabelTerm> label_weights;
  double base_rate = 0.35;
  std::uint64_t seed = 0;
  std::size_t d_in = 128;

  /// Question index -> topic index (round-robin).
  int topic_of(int question) const { return question % n_topics; }
  void validate() const;
};

SynthSpec parse_synth_spec(const std::string& json_text);
std::string synth_spec_to_json(const SynthSpec& spec);

struct SynthResult {
  Codebook codebook;
  std::vector<std::string> columns;
  std::vector<Record> records;
  Corpus corpus;
  std::string ground_truth_json;
  /// answers[g][q]: category index of question q in graph g.
  std::vector<std::vector<int>> answers;
  double label_bias = 0.0;
};

/// Encoding of an answer index used by the label function, in [-1, 1].
double answer_encoding(int answer, int n_categories);

SynthResult generate_synthetic_corpus(const SynthSpec& spec);

}  // namespace lami
