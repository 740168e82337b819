#include "lami/lm.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lami {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<unk>", "<bos>", "<eos>", "<nl>", "Yes", "No"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
}  // namespace

Tokenizer::Tokenizer() : Tokenizer(kReserved) {}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) : vocab_(std::move(vocabulary)) {
  for (std::size_t i = 0; i < kReserved.size(); ++i)
    if (i >= vocab_.size() || vocab_[i] != kReserved[i])
      throw std::invalid_argument("tokenizer: vocabulary must start with the reserved tokens");
  for (std::size_t i = 0; i < vocab_.size(); ++i)
    if (!index_.emplace(vocab_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("tokenizer: duplicate token '" + vocab_[i] + "'");
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      out.emplace_back("\n");
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      std::string w(text.substr(i, j - i));
      if (w != "Yes" && w != "No")
        for (char& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.push_back(std::move(w));
      i = j;
    } else {
      out.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

void Tokenizer::add_text(std::string_view text) {
  for (auto& t : split(text)) {
    if (t == "\n" || index_.count(t)) continue;
    index_.emplace(t, static_cast<int>(vocab_.size()));
    vocab_.push_back(std::move(t));
  }
}

int Tokenizer::id(const std::string& token) const {
  if (token == "\n") return kNewline;
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : split(text)) ids.push_back(id(t));
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id == kNewline) {
      out += '\n';
      continue;
    }
    const std::string& t = token(id);
    const bool word = is_word_char(t.front()) || t.front() == '<';
    if (!out.empty() && out.back() != '\n' && (word || t == "(")) out += ' ';
    out += t;
  }
  return out;
}

Matrix sinusoidal_positions(Eigen::Index n, Eigen::Index d) {
  Matrix p(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos)
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      p(pos, i) = i % 2 == 0 ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
    }
  return p;
}

BoolMatrix causal_mask(Eigen::Index n) {
  BoolMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = j <= i;
  return m;
}

TinyDecoderLM::TinyDecoderLM(Tokenizer tokenizer, const LmConfig& cfg, Rng& init)
    : tokenizer_(std::move(tokenizer)), cfg_(cfg) {
  if (cfg.d_lm % cfg.n_heads != 0) throw std::invalid_argument("lm: d_lm must be divisible by n_heads");
  const Eigen::Index d = cfg.d_lm;
  const Eigen::Index v = tokenizer_.size();
  embedding = Parameter{"lm.embedding", random_normal(v, d, init, 0.02 * std::sqrt(128.0 / double(d))), true};
  auto ones = [d] { return Matrix::Ones(1, d); };
  auto zeros = [](Eigen::Index c) { return Matrix::Zero(1, c); };
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "lm.block" + std::to_string(l) + ".";
    blocks.push_back(Block{{p + "ln1.g", ones(), true},
                           {p + "ln1.b", zeros(d), true},
                           {p + "wq", glorot(d, d, init), true},
                           {p + "wk", glorot(d, d, init), true},
                           {p + "wv", glorot(d, d, init), true},
                           {p + "wo", glorot(d, d, init), true},
                           {p + "ln2.g", ones(), true},
                           {p + "ln2.b", zeros(d), true},
                           {p + "ff1.w", glorot(cfg.d_ff, d, init), true},
                           {p + "ff1.b", zeros(cfg.d_ff), true},
                           {p + "ff2.w", glorot(d, cfg.d_ff, init), true},
                           {p + "ff2.b", zeros(d), true}});
  }
  lnf_g = Parameter{"lm.lnf.g", ones(), true};
  lnf_b = Parameter{"lm.lnf.b", zeros(d), true};
}

ParameterRefs TinyDecoderLM::parameters() {
  ParameterRefs out{&embedding};
  for (Block& b : blocks)
    for (Parameter* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.ff1_w, &b.ff1_b,
                         &b.ff2_w, &b.ff2_b})
      out.push_back(p);
  out.push_back(&lnf_g);
  out.push_back(&lnf_b);
  return out;
}

void TinyDecoderLM::freeze() {
  for (Parameter* p : parameters()) p->trainable = false;
  frozen_ = true;
}

void TinyDecoderLM::unfreeze() {
  for (Parameter* p : parameters()) p->trainable = true;
  frozen_ = false;
}

std::uint64_t TinyDecoderLM::digest() const {
  return parameter_digest(const_cast<TinyDecoderLM*>(this)->parameters());
}

Var TinyDecoderLM::block_forward(Tape& tape, Block& b, const Var& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dh = cfg_.d_lm / cfg_.n_heads;
  const BoolMatrix mask = causal_mask(n);
  Var h = ad::layer_norm_rows(x, tape.param(b.ln1_g), tape.param(b.ln1_b));
  Var q = ad::matmul_nt(h, tape.param(b.wq));
  Var k = ad::matmul_nt(h, tape.param(b.wk));
  Var v = ad::matmul_nt(h, tape.param(b.wv));
  std::vector<Var> heads;
  for (int head = 0; head < cfg_.n_heads; ++head) {
    Var qh = ad::slice_cols(q, head * dh, dh);
    Var kh = ad::slice_cols(k, head * dh, dh);
    Var vh = ad::slice_cols(v, head * dh, dh);
    Var att = ad::row_softmax(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))), &mask);
    heads.push_back(ad::matmul(att, vh));
  }
  Var y = ad::add(x, ad::matmul_nt(ad::concat_cols(heads), tape.param(b.wo)));
  Var h2 = ad::layer_norm_rows(y, tape.param(b.ln2_g), tape.param(b.ln2_b));
  Var ff = ad::activate(ad::add_row(ad::matmul_nt(h2, tape.param(b.ff1_w)), tape.param(b.ff1_b)), Activation::Gelu);
  ff = ad::add_row(ad::matmul_nt(ff, tape.param(b.ff2_w)), tape.param(b.ff2_b));
  return ad::add(y, ff);
}

Var TinyDecoderLM::hidden(Tape& tape, const Var& prefix, std::span<const int> ids) {
  if (ids.empty()) throw std::invalid_argument("lm: empty token sequence");
  for (int id : ids)
    if (id < 0 || id >= tokenizer_.size()) throw std::out_of_range("lm: token id out of range");
  Var x = ad::gather_rows(tape.param(embedding), std::vector<int>(ids.begin(), ids.end()));
  if (prefix.valid()) {
    if (prefix.cols() != cfg_.d_lm) throw std::invalid_argument("lm: prefix width differs from d_lm");
    const Var parts[] = {prefix, x};
    x = ad::concat_rows(parts);
  }
  if (x.rows() > cfg_.max_len) throw std::invalid_argument("lm: sequence longer than max_len");
  x = ad::add(x, tape.constant(sinusoidal_positions(x.rows(), cfg_.d_lm)));
  for (Block& b : blocks) x = block_forward(tape, b, x);
  return ad::layer_norm_rows(x, tape.param(lnf_g), tape.param(lnf_b));
}

Var TinyDecoderLM::logits(Tape& tape, const Var& hidden_rows) {
  return ad::matmul_nt(hidden_rows, tape.param(embedding));
}

Var TinyDecoderLM::next_token_logits(Tape& tape, const Var& prefix, std::span<const int> ids) {
  Var h = hidden(tape, prefix, ids);
  return logits(tape, ad::gather_rows(h, {static_cast<int>(h.rows() - 1)}));
}

Var generation_loss(TinyDecoderLM& lm, Tape& tape, const Var& z_u, std::span<const int> prompt_ids, bool label) {
  Var l = lm.next_token_logits(tape, z_u, prompt_ids);
  return ad::cross_entropy(l, {0}, {label ? Tokenizer::kYes : Tokenizer::kNo});
}

Var sequence_loss(TinyDecoderLM& lm, Tape& tape, const Var& prefix, std::span<const int> ids) {
  if (ids.size() < 2) throw std::invalid_argument("lm: sequence too short for next-token loss");
  Var h = lm.hidden(tape, prefix, ids);
  const int p = prefix.valid() ? static_cast<int>(prefix.rows()) : 0;
  std::vector<int> rows;
  std::vector<int> local;
  std::vector<int> targets;
  for (std::size_t k = 1; k < ids.size(); ++k) {
    rows.push_back(p + static_cast<int>(k) - 1);
    local.push_back(static_cast<int>(k) - 1);
    targets.push_back(ids[k]);
  }
  Var l = lm.logits(tape, ad::gather_rows(h, rows));
  return ad::scale(ad::cross_entropy(l, local, targets), 1.0 / static_cast<double>(targets.size()));
}

Generation generate(TinyDecoderLM& lm, const Matrix& z_u, std::span<const int> prompt_ids,
                    const GenerationConfig& cfg) {
  Generation out;
  std::vector<int> ids(prompt_ids.begin(), prompt_ids.end());
  for (int step = 0; step < cfg.max_tokens; ++step) {
    Tape tape;
    Var prefix = z_u.size() > 0 ? tape.constant(z_u) : Var();
    const RowVector l = lm.next_token_logits(tape, prefix, ids).value().row(0);
    int next = 0;
    if (step == 0) {
      next = l(Tokenizer::kYes) >= l(Tokenizer::kNo) ? Tokenizer::kYes : Tokenizer::kNo;
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index t = 0; t < l.size(); ++t) {
        if (t == Tokenizer::kPad || t == Tokenizer::kBos || t == Tokenizer::kUnk) continue;
        if (l(t) > best) {
          best = l(t);
          next = static_cast<int>(t);
        }
      }
    }
    if (next == Tokenizer::kEos) break;
    out.ids.push_back(next);
    ids.push_back(next);
    if (step + 1 == cfg.max_tokens) out.truncated = true;
  }
  out.text = lm.tokenizer().decode(out.ids);
  return out;
}

}  // namespace lami
