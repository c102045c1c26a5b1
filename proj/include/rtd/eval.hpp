#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtd/metrics.hpp"
#include "rtd/model.hpp"
#include "rtd/prompt.hpp"
#include "rtd/tokenizer.hpp"

namespace rtd {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataFormat { tsv, jsonl };

DataFormat parse_data_format(std::string_view name);
/// ".jsonl" / ".json" select jsonl, anything else tsv.
DataFormat data_format_for(const std::filesystem::path& path);

/// Which columns feed which template placeholders, and what the labels
/// look like.
struct DatasetSchema {
  std::map<std::string, std::string> text_columns;  // placeholder -> column
  std::string label_column = "label";
  TaskKind kind = TaskKind::classification;
  std::vector<std::string> label_space;  // classification
  double lower = 0.0;                    // regression bounds
  double upper = 1.0;
};

/// Column layout of the public release of each task's evaluation split.
DatasetSchema builtin_schema(std::string_view task);

struct Example {
  Fields fields;
  std::string gold;   // classification label as written in the file
  double value = 0.0;  // regression target
};

struct Dataset {
  std::string task;
  TaskKind kind = TaskKind::classification;
  std::vector<std::string> label_space;
  double lower = 0.0;
  double upper = 1.0;
  std::vector<Example> examples;
};

Dataset load_dataset(const std::filesystem::path& path, DataFormat format, const DatasetSchema& schema,
                     std::string task = {});

/// Seeded sample of `n` examples in their original order; the whole
/// dataset when it is not larger than `n`.
Dataset sample_subset(const Dataset& dataset, std::size_t n, std::uint64_t seed);

/// Test-set size the evaluation protocol samples down to for a task, or 0.
std::size_t subset_size_for_task(std::string_view task);
inline constexpr std::uint64_t kSubsetSeed = 42;

MetricKind default_metric(std::string_view task);

struct EvalOptions {
  std::vector<MetricKind> metrics;  // empty: default_metric(task)
  unsigned threads = 1;
  std::size_t max_len = 0;
  DegeneratePolicy policy = DegeneratePolicy::error;
  /// Dataset label treated as positive by F1 and Matthews; class index 1
  /// when no template label value matches.
  std::string positive_label = "1";
  std::string model_id;
  std::uint64_t seed = 0;
};

struct MetricResult {
  std::string name;
  double value = 0.0;
  bool undefined = false;
};

struct EvalReport {
  std::string task;
  std::string template_id;
  std::string model_id;
  TaskKind kind = TaskKind::classification;
  std::vector<MetricResult> metrics;
  std::size_t example_count = 0;
  std::vector<std::string> class_labels;          // dataset label per class index
  std::vector<std::vector<long>> confusion;       // [gold][predicted]
  std::size_t degenerate_count = 0;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
  std::vector<double> predictions;  // class index or regression value, dataset order
  std::vector<double> golds;
};

/// Scores every example, in parallel when options.threads > 1. Results are
/// independent of thread count and of dataset order.
template <typename T>
EvalReport run_eval(const Dataset& dataset, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                    const EvalOptions& options = {});

/// Single-line JSON without timing, so reruns are byte-identical.
std::string report_json(const EvalReport& report);
void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace rtd
