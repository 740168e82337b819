#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lami/tensor.hpp"

namespace lami {

/// Node features for question and topic texts.
///
/// HASHING mode hashes lowercase word unigrams and bigrams into `dim` signed
/// buckets and L2-normalises the result. PRECOMPUTED mode looks the text up in a
/// table keyed by text_key(text), loaded from a "key<TAB>v1 v2 ..." file.
class TextEmbedder {
 public:
  enum class Mode { Hashing, Precomputed };

  static TextEmbedder hashing(std::size_t dim);
  static TextEmbedder precomputed(const std::string& path, std::size_t dim);
  static TextEmbedder precomputed(std::unordered_map<std::string, Vector> table, std::size_t dim);

  Vector embed(std::string_view text) const;

  Mode mode() const { return mode_; }
  std::size_t dim() const { return dim_; }

  /// 16 hex digits of the 64-bit FNV-1a hash of the text.
  static std::string text_key(std::string_view text);
  /// Lowercase alphanumeric word tokens.
  static std::vector<std::string> words(std::string_view text);

 private:
  TextEmbedder(Mode mode, std::size_t dim) : mode_(mode), dim_(dim) {}

  Mode mode_;
  std::size_t dim_;
  std::unordered_map<std::string, Vector> table_;
};

}  // namespace lami
