#include <doctest.h>

#include <cmath>

#include "lami/gradcheck.hpp"
#include "lami/lm.hpp"

using namespace lami;

namespace {

Tokenizer small_tokenizer() {
  Tokenizer t;
  t.add_text("question answer smoked drunk weekly : - the user is at risk .");
  return t;
}

LmConfig small_config() {
  LmConfig c;
  c.d_lm = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 64;
  return c;
}

}  // namespace

TEST_CASE("tokenizer reserves special ids and keeps label words") {
  Tokenizer t;
  CHECK(t.size() == 7);
  CHECK(t.token(Tokenizer::kYes) == "Yes");
  CHECK(t.token(Tokenizer::kNo) == "No");
  CHECK(Tokenizer::split("Yes. yes NO\nA-b") ==
        std::vector<std::string>{"Yes", ".", "yes", "no", "\n", "a", "-", "b"});
  CHECK(t.encode("Yes No") == std::vector<int>{Tokenizer::kYes, Tokenizer::kNo});
  CHECK(t.encode("unseen") == std::vector<int>{Tokenizer::kUnk});
  t.add_text("Question : smoked");
  const int before = t.size();
  t.add_text("question smoked");
  CHECK(t.size() == before);
  const auto ids = t.encode("Question: smoked\n");
  CHECK(ids.back() == Tokenizer::kNewline);
  CHECK(t.decode(ids) == "question: smoked\n");
  Tokenizer copy(t.vocabulary());
  CHECK(copy.encode("question smoked") == t.encode("question smoked"));
}

TEST_CASE("causal mask and sinusoidal positions") {
  const BoolMatrix m = causal_mask(4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(m(i, j) == (j <= i));
  const Matrix p = sinusoidal_positions(3, 4);
  CHECK(p(0, 0) == 0.0);
  CHECK(p(0, 1) == 1.0);
  CHECK(std::abs(p(1, 0) - std::sin(1.0)) < 1e-15);
  CHECK(std::abs(p(1, 1) - std::cos(1.0)) < 1e-15);
}

TEST_CASE("hidden state at position t ignores later tokens") {
  Rng init(1);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  const std::vector<int> a{2, 7, 8, 9, 10};
  std::vector<int> b = a;
  b[3] = 12;
  b[4] = 13;
  Tape t1, t2;
  const Matrix ha = lm.hidden(t1, Var(), a).value();
  const Matrix hb = lm.hidden(t2, Var(), b).value();
  CHECK((ha.topRows(3) - hb.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ha.row(3) - hb.row(3)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("prefix influences every later position") {
  Rng init(2);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  lm.freeze();
  const std::vector<int> ids{2, 7, 8, 9};
  Tape t;
  Var z = t.leaf(Matrix::Constant(1, 8, 0.1));
  Var loss = generation_loss(lm, t, z, ids, true);
  t.backward(loss);
  CHECK(t.grad(z).norm() > 1e-8);
  CHECK(t.grad(lm.embedding).isZero(0.0));
  for (auto& b : lm.blocks) CHECK(t.grad(b.wq).isZero(0.0));
}

TEST_CASE("tied head with zero embeddings gives a uniform next-token distribution") {
  Rng init(3);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  lm.embedding.value.setZero();
  const std::vector<int> ids{2, 7, 8};
  Tape t;
  const double loss = generation_loss(lm, t, Var(), ids, false).scalar();
  CHECK(std::abs(loss - std::log(static_cast<double>(lm.tokenizer().size()))) < 1e-12);
}

TEST_CASE("freezing keeps parameters and digest fixed") {
  Rng init(4);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  const auto d0 = lm.digest();
  lm.freeze();
  CHECK(lm.frozen());
  for (Parameter* p : lm.parameters()) CHECK_FALSE(p->trainable);
  CHECK(lm.digest() == d0);
  lm.embedding.value(0, 0) += 1e-9;
  CHECK(lm.digest() != d0);
  lm.unfreeze();
  for (Parameter* p : lm.parameters()) CHECK(p->trainable);
}

TEST_CASE("sequence loss gradients match finite differences") {
  Rng init(5);
  LmConfig c = small_config();
  c.n_layers = 1;
  TinyDecoderLM lm(small_tokenizer(), c, init);
  const std::vector<int> ids{2, 7, 8, 9, 3};
  Parameter z{"z", random_normal(1, 8, init, 0.5), true};
  ParameterRefs ps = lm.parameters();
  ps.push_back(&z);
  const auto r = gradient_check(ps, [&](Tape& t) { return sequence_loss(lm, t, t.param(z), ids); });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("greedy generation is deterministic and starts with a label") {
  Rng init(6);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  const std::vector<int> ids{2, 7, 8};
  const Matrix z = Matrix::Constant(1, 8, 0.3);
  const auto a = generate(lm, z, ids, {5});
  const auto b = generate(lm, z, ids, {5});
  CHECK(a.ids == b.ids);
  CHECK(a.text == b.text);
  REQUIRE(!a.ids.empty());
  CHECK((a.ids[0] == Tokenizer::kYes || a.ids[0] == Tokenizer::kNo));
  CHECK(a.truncated == (a.ids.size() == 5));
  const auto one = generate(lm, z, ids, {1});
  CHECK(one.ids.size() == 1);
  CHECK(one.truncated);
}

TEST_CASE("invalid inputs are rejected") {
  Rng init(7);
  TinyDecoderLM lm(small_tokenizer(), small_config(), init);
  Tape t;
  CHECK_THROWS(lm.hidden(t, Var(), std::vector<int>{}));
  CHECK_THROWS(lm.hidden(t, Var(), std::vector<int>{999}));
  CHECK_THROWS(lm.hidden(t, t.constant(Matrix::Zero(1, 3)), std::vector<int>{2}));
  CHECK_THROWS(lm.hidden(t, Var(), std::vector<int>(65, 2)));
}
