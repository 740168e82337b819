#include <doctest.h>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lami/metrics.hpp"
#include "lami/tensor.hpp"

using namespace lami;

namespace {

// std::vector<bool> has no contiguous storage, so labels live in a plain array.
struct Labels {
  std::unique_ptr<bool[]> v;
  std::size_t n = 0;
  explicit Labels(std::size_t size) : v(new bool[size]()), n(size) {}
  bool& operator[](std::size_t i) { return v[i]; }
  bool operator[](std::size_t i) const { return v[i]; }
  operator std::span<const bool>() const { return {v.get(), n}; }
};

Labels bools(std::initializer_list<int> xs) {
  Labels out(xs.size());
  std::size_t i = 0;
  for (int x : xs) out[i++] = x != 0;
  return out;
}

// Pairwise AUC: share of (positive, negative) pairs ordered correctly, ties count half.
double brute_auc(const std::vector<double>& s, const Labels& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return num / den;
}

}  // namespace

TEST_CASE("perfect predictions") {
  const std::vector<double> p{0.9, 0.8, 0.2, 0.1};
  const auto y = bools({1, 1, 0, 0});
  const auto r = compute_metrics(p, y);
  CHECK(r.accuracy == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1_macro == 1.0);
  CHECK(r.auc == 1.0);
}

TEST_CASE("one of each confusion cell") {
  const std::vector<double> p{0.9, 0.6, 0.4, 0.1};
  const auto y = bools({1, 0, 1, 0});
  const auto r = compute_metrics(p, y);
  CHECK(r.tp == 1);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.tn == 1);
  CHECK(r.accuracy == 0.5);
  CHECK(r.precision == 0.5);
  CHECK(r.recall == 0.5);
  CHECK(r.f1_macro == 0.5);
  CHECK(r.auc == 0.75);
}

TEST_CASE("reversed ranking has AUC zero and ties count half") {
  const auto y = bools({1, 1, 0, 0});
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
}

TEST_CASE("threshold is inclusive and empty positive predictions are flagged") {
  const auto y = bools({1, 0});
  const auto r = compute_metrics(std::vector<double>{0.5, 0.2}, y);
  CHECK(r.tp == 1);
  const auto none = compute_metrics(std::vector<double>{0.4, 0.2}, y);
  CHECK(none.precision == 0.0);
  CHECK(none.precision_undefined);
  CHECK_FALSE(none.recall_undefined);
}

TEST_CASE("metrics agree with brute-force oracles") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 200;
    std::vector<double> p(n);
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.4;
      // coarse grid so ties occur
      p[i] = std::round(rng.uniform() * 20.0) / 20.0;
    }
    y[0] = true;
    y[1] = false;
    const auto r = compute_metrics(p, y);
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pred = p[i] >= 0.5;
      tp += pred && y[i];
      fp += pred && !y[i];
      fn += !pred && y[i];
      tn += !pred && !y[i];
    }
    CHECK(r.tp == tp);
    CHECK(r.fp == fp);
    CHECK(r.fn == fn);
    CHECK(r.tn == tn);
    const double acc = static_cast<double>(tp + tn) / static_cast<double>(n);
    CHECK(std::abs(r.accuracy - acc) < 1e-12);
    auto f1 = [](double a, double b, double c) { return 2.0 * a / (2.0 * a + b + c); };
    const double macro = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
    CHECK(std::abs(r.f1_macro - macro) < 1e-12);
    CHECK(std::abs(r.auc - brute_auc(p, y)) < 1e-12);

    // strictly monotone transforms leave AUC unchanged
    std::vector<double> q(n);
    for (std::size_t i = 0; i < n; ++i) q[i] = std::exp(3.0 * p[i]) - 7.0;
    CHECK(std::abs(roc_auc(q, y) - r.auc) < 1e-12);
  }
}

TEST_CASE("invalid inputs throw") {
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{0.3, 0.7}, bools({1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{}, Labels(0)), std::invalid_argument);
  CHECK_THROWS_AS(compute_metrics(std::vector<double>{0.3}, bools({1, 0})), std::invalid_argument);
}

TEST_CASE("aggregation uses the sample standard deviation") {
  std::vector<EvalReport> rs(3);
  rs[0].accuracy = 0.6;
  rs[1].accuracy = 0.7;
  rs[2].accuracy = 0.8;
  const auto a = aggregate_reports(rs);
  CHECK(a.runs == 3);
  CHECK(std::abs(a.accuracy.mean - 0.7) < 1e-12);
  CHECK(std::abs(a.accuracy.std - 0.1) < 1e-12);
  const auto one = aggregate_reports(std::span<const EvalReport>(rs.data(), 1));
  CHECK(one.accuracy.std == 0.0);
}

TEST_CASE("csv row has as many fields as the header") {
  auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  CHECK(count(report_csv_header()) == count(report_csv_row(EvalReport{})));
}
