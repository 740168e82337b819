#pragma once

// A small decoder-only transformer used as the frozen language model.
//
// Pre-LN blocks with causal multi-head attention, sinusoidal positions and an
// output head tied to the token embedding. A soft prefix (one d_lm row per
// prefix token) may precede the token embeddings.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lami/autodiff.hpp"

namespace lami {

/// Lowercase word tokens plus single-character punctuation tokens. The exact
/// words "Yes" and "No" map to dedicated label tokens; "\n" maps to <nl>.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNewline = 4;
  static constexpr int kYes = 5;
  static constexpr int kNo = 6;

  Tokenizer();
  explicit Tokenizer(std::vector<std::string> vocabulary);

  static std::vector<std::string> split(std::string_view text);

  /// Adds every token of `text` not yet in the vocabulary.
  void add_text(std::string_view text);
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

struct LmConfig {
  Eigen::Index d_lm = 128;
  int n_layers = 2;
  int n_heads = 4;
  Eigen::Index d_ff = 512;
  int max_len = 2048;
};

class TinyDecoderLM {
 public:
  TinyDecoderLM(Tokenizer tokenizer, const LmConfig& cfg, Rng& init);
  TinyDecoderLM(const TinyDecoderLM&) = delete;
  TinyDecoderLM& operator=(const TinyDecoderLM&) = delete;

  /// Final-layer hidden states of [prefix; embed(ids)], (P + T) x d_lm.
  /// `prefix` may be invalid (no prefix).
  Var hidden(Tape& tape, const Var& prefix, std::span<const int> ids);
  /// Logits over the vocabulary for the given hidden rows.
  Var logits(Tape& tape, const Var& hidden_rows);
  /// Next-token logits after the whole sequence, 1 x V.
  Var next_token_logits(Tape& tape, const Var& prefix, std::span<const int> ids);

  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }
  std::uint64_t digest() const;

  ParameterRefs parameters();
  const Tokenizer& tokenizer() const { return tokenizer_; }
  const LmConfig& config() const { return cfg_; }

  struct Block {
    Parameter ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  Parameter embedding;  // V x d_lm
  std::vector<Block> blocks;
  Parameter lnf_g, lnf_b;

 private:
  Var block_forward(Tape& tape, Block& b, const Var& x);

  Tokenizer tokenizer_;
  LmConfig cfg_;
  bool frozen_ = false;
};

Matrix sinusoidal_positions(Eigen::Index n, Eigen::Index d);
BoolMatrix causal_mask(Eigen::Index n);

/// -log p(label token | [z_u; prompt]) at the position after the prompt.
Var generation_loss(TinyDecoderLM& lm, Tape& tape, const Var& z_u, std::span<const int> prompt_ids, bool label);

struct GenerationConfig {
  int max_tokens = 48;
};

struct Generation {
  std::vector<int> ids;  // starts with Yes or No
  std::string text;
  bool truncated = false;  // stopped at max_tokens without <eos>
};

/// Greedy decoding; the first token is restricted to {Yes, No}.
Generation generate(TinyDecoderLM& lm, const Matrix& z_u, std::span<const int> prompt_ids,
                    const GenerationConfig& cfg = {});

/// Next-token cross-entropy over a whole sequence, averaged per predicted token.
Var sequence_loss(TinyDecoderLM& lm, Tape& tape, const Var& prefix, std::span<const int> ids);

}  // namespace lami
