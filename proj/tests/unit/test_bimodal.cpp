#include <doctest.h>

#include <cmath>
#include <memory>

#include "lami/bimodal.hpp"
#include "lami/errors.hpp"
#include "support.hpp"

using namespace lami;

namespace {

struct Fixture {
  SynthResult synth = test::small_synth(24, 3, {}, {{0, -1, 3.0}, {1, -1, -2.0}});
  Rng init{9};
  DetectorConfig dcfg{8, 2, -1, 3, false};
  DetectorModel detector{synth.corpus.header, dcfg, init};
  ProjectionHead projection{"proj", 8, 8, init};
  std::unique_ptr<TinyDecoderLM> lm;
  std::vector<BimodalExample> examples;

  Fixture() {
    LmConfig lc;
    lc.d_lm = 8;
    lc.n_layers = 1;
    lc.n_heads = 2;
    lc.d_ff = 16;
    lm = std::make_unique<TinyDecoderLM>(build_tokenizer(synth.corpus.header), lc, init);
    lm->freeze();
    for (const auto& g : synth.corpus.graphs) examples.push_back({&g, {}});
  }
  BimodalConfig config(bool use_llm) const {
    BimodalConfig c;
    c.epochs = 6;
    c.batch_size = 4;
    c.adam.lr = 2e-2;
    c.use_llm = use_llm;
    c.k_att = 3;
    return c;
  }
};

}  // namespace

TEST_CASE("bimodal loss is the plain sum") {
  CHECK(bimodal_loss(0.3, 0.4) == doctest::Approx(0.7).epsilon(1e-15));
  Tape t;
  CHECK(bimodal_loss(t.constant(Matrix::Constant(1, 1, 0.3)), t.constant(Matrix::Constant(1, 1, 0.4))).scalar() ==
        doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("graph token projection is a matrix-vector product") {
  RowVector h(2);
  h << 1.5, -2.0;
  CHECK(project_graph_token(h, Matrix::Identity(2, 2)) == h);
  CHECK(project_graph_token(h, Matrix::Zero(3, 2)).isZero(0.0));
  Matrix w(3, 2);
  w << 1, 2, 3, 4, 5, 6;
  RowVector expected(3);
  expected << 1.5 - 4.0, 4.5 - 8.0, 7.5 - 12.0;
  CHECK(project_graph_token(h, w) == expected);
  Rng rng(1);
  ProjectionHead p("p", 2, 3, rng);
  Tape t;
  CHECK((p.project(t, t.constant(h)).value() - project_graph_token(h, p.w.value)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("step losses add up and the LM receives no gradient") {
  Fixture f;
  Tape t;
  const auto l = bimodal_step(f.detector, f.projection, f.lm.get(), f.synth.corpus.header, f.examples[0], 3, t);
  REQUIRE(l.l_gen.valid());
  CHECK(std::abs(l.l_bi.scalar() - (l.l_gen.scalar() + l.l_cls.scalar())) < 1e-12);
  t.backward(l.l_bi);
  CHECK(t.grad(f.lm->embedding).isZero(0.0));
  CHECK(t.grad(f.projection.w).norm() > 0.0);
  CHECK(t.grad(f.detector.head.w).norm() > 0.0);
}

TEST_CASE("training keeps the LM fixed, logs consistent losses and lowers the classifier loss") {
  Fixture f;
  const auto digest = f.lm->digest();
  Rng rng(2);
  const auto log = train_bimodal(f.detector, f.projection, f.lm.get(), f.synth.corpus.header, f.examples,
                                 f.config(true), rng);
  REQUIRE(log.size() == 6);
  CHECK(f.lm->digest() == digest);
  for (const auto& e : log) {
    CHECK(e.has_gen);
    CHECK(std::abs(e.l_bi - (e.l_gen + e.l_cls)) < 1e-12);
    CHECK(bimodal_epoch_to_json(e).find("\"l_gen\"") != std::string::npos);
  }
  CHECK(log.back().l_cls < log.front().l_cls);
}

TEST_CASE("without the LM only the classifier loss is optimised") {
  Fixture f;
  const Matrix before = f.projection.w.value;
  Rng rng(3);
  const auto log = train_bimodal(f.detector, f.projection, nullptr, f.synth.corpus.header, f.examples,
                                 f.config(false), rng);
  for (const auto& e : log) {
    CHECK_FALSE(e.has_gen);
    CHECK(e.l_bi == e.l_cls);
    CHECK(bimodal_epoch_to_json(e).find("l_gen") == std::string::npos);
  }
  CHECK(f.projection.w.value == before);
}

TEST_CASE("an unfrozen LM is refused") {
  Fixture f;
  f.lm->unfreeze();
  Rng rng(4);
  CHECK_THROWS_AS(train_bimodal(f.detector, f.projection, f.lm.get(), f.synth.corpus.header, f.examples,
                                f.config(true), rng),
                  TrainingError);
}

TEST_CASE("explanations start with a label and list k questions") {
  Fixture f;
  const auto e = generate_explanation(f.detector, f.projection, *f.lm, f.synth.corpus.header, f.examples[0], 3, {6});
  CHECK(e.questions.size() == 3);
  CHECK((e.text.rfind("Yes", 0) == 0 || e.text.rfind("No", 0) == 0));
  CHECK(e.lm_label == (e.text.rfind("Yes", 0) == 0));
  double prev = 2.0;
  for (const auto& [id, a] : e.questions) {
    CHECK(a <= prev);
    prev = a;
  }
}
