#include "rtd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace rtd {
namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw MetricError("metric: " + std::to_string(a) + " predictions for " + std::to_string(b) + " golds");
  if (a == 0) throw MetricError("metric: no examples");
}

std::vector<int> as_labels(std::span<const double> values) {
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double r = std::round(values[i]);
    if (r != values[i]) throw MetricError("metric: non-integer class index " + std::to_string(values[i]));
    out[i] = static_cast<int>(r);
  }
  return out;
}

}  // namespace

MetricKind parse_metric(std::string_view name) {
  if (name == "accuracy" || name == "acc") return MetricKind::accuracy;
  if (name == "matthews" || name == "mcc") return MetricKind::matthews;
  if (name == "f1") return MetricKind::f1;
  if (name == "pearson") return MetricKind::pearson;
  throw MetricError("unknown metric '" + std::string(name) + "'");
}

std::string_view metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::matthews: return "matthews";
    case MetricKind::f1: return "f1";
    case MetricKind::pearson: return "pearson";
  }
  return "?";
}

BinaryConfusion binary_confusion(std::span<const int> predictions, std::span<const int> golds, int positive) {
  check_lengths(predictions.size(), golds.size());
  BinaryConfusion c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool p = predictions[i] == positive;
    const bool g = golds[i] == positive;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(std::span<const int> predictions, std::span<const int> golds) {
  check_lengths(predictions.size(), golds.size());
  long hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

MetricValue matthews(const BinaryConfusion& c) {
  const double tp = c.tp, fp = c.fp, tn = c.tn, fn = c.fn;
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return {0.0, true};
  return {(tp * tn - fp * fn) / std::sqrt(denom), false};
}

MetricValue f1_score(const BinaryConfusion& c) {
  const double denom = 2.0 * c.tp + c.fp + c.fn;
  if (denom == 0.0) return {0.0, true};
  return {2.0 * c.tp / denom, false};
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size());
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson: zero-variance input");
  return sxy / std::sqrt(sxx * syy);
}

MetricValue compute_metric(MetricKind kind, std::span<const double> predictions, std::span<const double> golds,
                           int positive_class) {
  check_lengths(predictions.size(), golds.size());
  if (kind == MetricKind::pearson) return {pearson(predictions, golds), false};
  const auto p = as_labels(predictions);
  const auto g = as_labels(golds);
  switch (kind) {
    case MetricKind::accuracy: return {accuracy(p, g), false};
    case MetricKind::matthews: return matthews(binary_confusion(p, g, positive_class));
    case MetricKind::f1: return f1_score(binary_confusion(p, g, positive_class));
    case MetricKind::pearson: break;
  }
  throw MetricError("metric: unsupported kind");
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double positive_rank_sum = 0.0;
  long positives = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const long negatives = static_cast<long>(scores.size()) - positives;
  if (positives == 0 || negatives == 0) throw MetricError("roc_auc: needs both positive and negative labels");
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

}  // namespace rtd
