#pragma once

#include <span>
#include <string>
#include <vector>

namespace lami {

struct EvalReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  double precision = 0.0;  // positive class
  double recall = 0.0;     // positive class
  double f1_macro = 0.0;
  double auc = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  // set when a ratio had a zero denominator and was reported as 0
  bool precision_undefined = false;
  bool recall_undefined = false;
  double threshold = 0.5;

  bool operator==(const EvalReport&) const = default;
};

/// Confusion at `threshold` (p >= threshold is positive), macro-F1 over both
/// classes and ROC-AUC by midranks. Throws std::invalid_argument on empty or
/// mismatched input and on a single-class label set.
EvalReport compute_metrics(std::span<const double> probabilities, std::span<const bool> labels,
                           double threshold = 0.5);

/// Mann-Whitney AUC with midranks for ties.
double roc_auc(std::span<const double> scores, std::span<const bool> labels);

std::string report_to_json(const EvalReport& r);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one run
};

struct AggregateReport {
  std::size_t runs = 0;
  MetricSummary accuracy, precision, recall, f1_macro, auc;
};

AggregateReport aggregate_reports(std::span<const EvalReport> reports);
std::string aggregate_to_json(const AggregateReport& a);

}  // namespace lami
