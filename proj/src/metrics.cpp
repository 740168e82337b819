#include "lami/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lami {

namespace {

double ratio(double num, double den, bool* undefined) {
  if (den == 0.0) {
    if (undefined != nullptr) *undefined = true;
    return 0.0;
  }
  return num / den;
}

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("auc: bad input sizes");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("auc: undefined for a single-class label set");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

EvalReport compute_metrics(std::span<const double> probabilities, std::span<const bool> labels, double threshold) {
  if (probabilities.size() != labels.size()) throw std::invalid_argument("metrics: length mismatch");
  if (probabilities.empty()) throw std::invalid_argument("metrics: no predictions");
  EvalReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = probabilities[i] >= threshold;
    if (pred && labels[i]) ++r.tp;
    if (pred && !labels[i]) ++r.fp;
    if (!pred && labels[i]) ++r.fn;
    if (!pred && !labels[i]) ++r.tn;
  }
  const auto tp = static_cast<double>(r.tp), fp = static_cast<double>(r.fp);
  const auto fn = static_cast<double>(r.fn), tn = static_cast<double>(r.tn);
  r.accuracy = (tp + tn) / (tp + fp + fn + tn);
  r.precision = ratio(tp, tp + fp, &r.precision_undefined);
  r.recall = ratio(tp, tp + fn, &r.recall_undefined);
  bool neg_p_undef = false;
  bool neg_r_undef = false;
  const double neg_precision = ratio(tn, tn + fn, &neg_p_undef);
  const double neg_recall = ratio(tn, tn + fp, &neg_r_undef);
  r.precision_undefined = r.precision_undefined || neg_p_undef;
  r.recall_undefined = r.recall_undefined || neg_r_undef;
  r.precision_macro = 0.5 * (r.precision + neg_precision);
  r.recall_macro = 0.5 * (r.recall + neg_recall);
  r.f1_macro = 0.5 * (f1(r.precision, r.recall) + f1(neg_precision, neg_recall));
  r.auc = roc_auc(probabilities, labels);
  return r;
}

std::string report_to_json(const EvalReport& r) {
  return nlohmann::json{{"accuracy", r.accuracy},
                        {"precision", r.precision},
                        {"recall", r.recall},
                        {"f1_macro", r.f1_macro},
                        {"auc", r.auc},
                        {"precision_macro", r.precision_macro},
                        {"recall_macro", r.recall_macro},
                        {"precision_undefined", r.precision_undefined},
                        {"recall_undefined", r.recall_undefined},
                        {"threshold", r.threshold},
                        {"confusion", {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"tn", r.tn}}}}
      .dump(2);
}

std::string report_csv_header() {
  return "accuracy,precision,recall,f1_macro,auc,precision_macro,recall_macro,tp,fp,fn,tn";
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1_macro << ',' << r.auc << ','
     << r.precision_macro << ',' << r.recall_macro << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << r.tn;
  return os.str();
}

AggregateReport aggregate_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  AggregateReport a;
  a.runs = reports.size();
  auto summarize = [&](double EvalReport::*field) {
    MetricSummary s;
    for (const auto& r : reports) s.mean += r.*field;
    s.mean /= static_cast<double>(reports.size());
    if (reports.size() > 1) {
      double ss = 0.0;
      for (const auto& r : reports) ss += (r.*field - s.mean) * (r.*field - s.mean);
      s.std = std::sqrt(ss / static_cast<double>(reports.size() - 1));
    }
    return s;
  };
  a.accuracy = summarize(&EvalReport::accuracy);
  a.precision = summarize(&EvalReport::precision);
  a.recall = summarize(&EvalReport::recall);
  a.f1_macro = summarize(&EvalReport::f1_macro);
  a.auc = summarize(&EvalReport::auc);
  return a;
}

std::string aggregate_to_json(const AggregateReport& a) {
  auto s = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  return nlohmann::json{{"runs", a.runs},           {"accuracy", s(a.accuracy)}, {"precision", s(a.precision)},
                        {"recall", s(a.recall)},     {"f1_macro", s(a.f1_macro)}, {"auc", s(a.auc)}}
      .dump(2);
}

}  // namespace lami
