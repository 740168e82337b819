#include "lami/prompt.hpp"

#include <algorithm>
#include <map>

#include "lami/errors.hpp"

namespace lami {

std::string render_prompt(const std::vector<QaLine>& qa, const std::vector<std::pair<std::string, std::string>>& cues,
                          PromptVariant variant) {
  std::string out;
  out += kSystemInstruction;
  out += '\n';
  out += kPairsHeader;
  out += '\n';
  for (const QaLine& l : qa) {
    out += "Question: " + l.question + "\n";
    out += "Answer: " + l.answer + "\n";
  }
  for (const auto& [a, b] : cues)
    out += "Think about the possible relations between " + a + " and " + b + " given the user's answers to them.\n";
  out += kFollowingQuestion;
  out += '\n';
  out += variant == PromptVariant::A ? kFollowingA : kFollowingB;
  out += '\n';
  return out;
}

PromptBundle textualize(const RelationalGraph& g, const CorpusHeader& header, const std::vector<int>& selected,
                        const std::vector<std::pair<int, int>>& latent, PromptVariant variant,
                        const Tokenizer* tokenizer) {
  if (selected.empty()) throw std::invalid_argument("textualize: no questions selected");
  PromptBundle b;
  b.variant = variant;
  std::map<int, std::size_t> rank;
  for (int node : selected) {
    if (node < 0 || node >= static_cast<int>(g.nodes.size()) || g.nodes[static_cast<std::size_t>(node)].kind != NodeKind::Question)
      throw DataError("unknown-question", "node " + std::to_string(node) + " is not a question");
    const std::string& qid = g.nodes[static_cast<std::size_t>(node)].ref;
    auto text = header.question_text.find(qid);
    if (text == header.question_text.end()) throw DataError("unknown-question", "no wording for question " + qid);
    const auto rel = g.answer_relation(node);
    if (!rel) throw DataError("missing-answer", "question " + qid + " has no answer edge");
    if (!rank.emplace(node, b.qa.size()).second) throw std::invalid_argument("textualize: question selected twice");
    b.qa.push_back(QaLine{node, qid, text->second, header.relations.at(*rel).category});
  }

  std::vector<std::pair<std::size_t, std::size_t>> ranked;
  for (const auto& [x, y] : latent) {
    auto rx = rank.find(x);
    auto ry = rank.find(y);
    if (rx == rank.end() || ry == rank.end()) continue;
    ranked.emplace_back(std::min(rx->second, ry->second), std::max(rx->second, ry->second));
  }
  std::sort(ranked.begin(), ranked.end());
  ranked.erase(std::unique(ranked.begin(), ranked.end()), ranked.end());
  for (const auto& [i, j] : ranked) {
    b.cues.emplace_back(b.qa[i].question, b.qa[j].question);
    b.cue_ids.emplace_back(b.qa[i].question_id, b.qa[j].question_id);
  }

  b.text = render_prompt(b.qa, b.cues, variant);
  if (tokenizer != nullptr) {
    b.token_ids.push_back(Tokenizer::kBos);
    for (int id : tokenizer->encode(b.text)) b.token_ids.push_back(id);
  }
  if (g.label) b.label_token = *g.label ? Tokenizer::kYes : Tokenizer::kNo;
  return b;
}

std::string templated_rationale(const PromptBundle& bundle, bool label) {
  std::string subject = bundle.qa.front().question;
  if (bundle.qa.size() > 1) subject += " and " + bundle.qa[1].question;
  return std::string(label ? "Yes" : "No") + ". The answers to " + subject +
         (label ? " point to elevated risk." : " do not point to elevated risk.");
}

}  // namespace lami
