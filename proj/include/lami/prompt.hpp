#pragma once

// Text rendering of a respondent's key questions for the language model.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lami/graph.hpp"
#include "lami/lm.hpp"

namespace lami {

enum class PromptVariant { A, B };

inline constexpr const char* kSystemInstruction =
    "Here are some question-answer pairs provided by a user aged between 15 and 25 years old. Based on these facts, "
    "infer whether this user uses illicit drugs.";
inline constexpr const char* kPairsHeader = "Here are the question-answer pairs:";
inline constexpr const char* kFollowingQuestion = "Based on these facts, can you infer whether this user uses illicit drugs?";
inline constexpr const char* kFollowingA = "Please answer with only \"Yes\" or \"No\".";
inline constexpr const char* kFollowingB = "Please answer \"Yes\" or \"No\" and explain why.";

struct QaLine {
  int node = 0;
  std::string question_id;
  std::string question;
  std::string answer;
};

struct PromptBundle {
  PromptVariant variant = PromptVariant::A;
  std::vector<QaLine> qa;                           // alpha-descending
  std::vector<std::pair<std::string, std::string>> cues;  // question texts, higher-ranked first
  std::vector<std::pair<std::string, std::string>> cue_ids;
  std::string text;                                 // rendered prompt, every line ends in '\n'
  std::vector<int> token_ids;                       // <bos> + tokens of text
  int label_token = -1;                             // Yes/No token when the label is known
};

std::string render_prompt(const std::vector<QaLine>& qa, const std::vector<std::pair<std::string, std::string>>& cues,
                          PromptVariant variant);

/// `selected`: question node ids in alpha-descending order. `latent`: latent
/// question pairs (node ids); only pairs with both endpoints selected become cues.
PromptBundle textualize(const RelationalGraph& g, const CorpusHeader& header, const std::vector<int>& selected,
                        const std::vector<std::pair<int, int>>& latent, PromptVariant variant,
                        const Tokenizer* tokenizer = nullptr);

/// Short justification used as the variant B target when warm-training the LM.
std::string templated_rationale(const PromptBundle& bundle, bool label);

}  // namespace lami
