#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rtd {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MetricKind { accuracy, matthews, f1, pearson };

MetricKind parse_metric(std::string_view name);
std::string_view metric_name(MetricKind kind);

struct MetricValue {
  double value = 0.0;
  bool undefined = false;  // denominator was zero; value reported as 0
};

struct BinaryConfusion {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;
};

/// Labels must be 0/1 unless they equal `positive`; anything else is negative.
BinaryConfusion binary_confusion(std::span<const int> predictions, std::span<const int> golds, int positive = 1);

double accuracy(std::span<const int> predictions, std::span<const int> golds);
MetricValue matthews(const BinaryConfusion& c);
MetricValue f1_score(const BinaryConfusion& c);
/// Throws MetricError when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Classification metrics read the values as class indices.
MetricValue compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> golds,
                           int positive_class = 1);

/// Area under the ROC curve; tied scores count one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace rtd
