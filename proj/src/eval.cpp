#include "rtd/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "rtd/random.hpp"

namespace rtd {
namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

void set_label(Example& ex, const std::string& raw, const DatasetSchema& schema, const std::filesystem::path& path,
               std::size_t line) {
  const std::string label = trim(raw);
  if (label.empty()) throw DatasetError(where(path, line) + "unparseable label ''");
  if (schema.kind == TaskKind::regression) {
    double v = 0.0;
    const auto res = std::from_chars(label.data(), label.data() + label.size(), v);
    if (res.ec != std::errc() || res.ptr != label.data() + label.size() || !std::isfinite(v)) {
      throw DatasetError(where(path, line) + "unparseable label '" + label + "'");
    }
    if (v < schema.lower || v > schema.upper) {
      std::ostringstream msg;
      msg << where(path, line) << "label " << label << " outside bounds [" << schema.lower << ", " << schema.upper << "]";
      throw DatasetError(msg.str());
    }
    ex.value = v;
    ex.gold = label;
    return;
  }
  if (!schema.label_space.empty() &&
      std::find(schema.label_space.begin(), schema.label_space.end(), label) == schema.label_space.end()) {
    throw DatasetError(where(path, line) + "label '" + label + "' outside the declared label space");
  }
  ex.gold = label;
}

std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 1e15) return std::to_string(static_cast<long long>(d));
    return v.dump();
  }
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  throw DatasetError("not a scalar");
}

Dataset empty_dataset(const DatasetSchema& schema, std::string task) {
  Dataset d;
  d.task = std::move(task);
  d.kind = schema.kind;
  d.label_space = schema.label_space;
  d.lower = schema.lower;
  d.upper = schema.upper;
  return d;
}

Dataset load_tsv(const std::filesystem::path& path, std::istream& in, const DatasetSchema& schema, std::string task) {
  Dataset data = empty_dataset(schema, std::move(task));
  std::string raw;
  if (!std::getline(in, raw)) throw DatasetError(path.string() + ": empty file");
  if (!raw.empty() && raw.back() == '\r') raw.pop_back();
  if (raw.size() >= 3 && raw.compare(0, 3, "\xEF\xBB\xBF") == 0) raw.erase(0, 3);
  const auto header = split_tabs(raw);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DatasetError(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::pair<std::string, std::size_t>> text_cols;
  for (const auto& [placeholder, name] : schema.text_columns) text_cols.emplace_back(placeholder, column(name));
  const std::size_t label_col = column(schema.label_column);

  std::size_t line = 1;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (trim(raw).empty()) continue;
    const auto cells = split_tabs(raw);
    Example ex;
    for (const auto& [placeholder, idx] : text_cols) {
      if (idx >= cells.size()) {
        throw DatasetError(where(path, line) + "missing column '" + schema.text_columns.at(placeholder) + "'");
      }
      ex.fields[placeholder] = cells[idx];
    }
    if (label_col >= cells.size()) throw DatasetError(where(path, line) + "missing column '" + schema.label_column + "'");
    set_label(ex, cells[label_col], schema, path, line);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

Dataset load_jsonl(const std::filesystem::path& path, std::istream& in, const DatasetSchema& schema, std::string task) {
  Dataset data = empty_dataset(schema, std::move(task));
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(where(path, line) + "invalid JSON: " + e.what());
    }
    if (!obj.is_object()) throw DatasetError(where(path, line) + "expected a JSON object");
    Example ex;
    for (const auto& [placeholder, name] : schema.text_columns) {
      const auto it = obj.find(name);
      if (it == obj.end()) throw DatasetError(where(path, line) + "missing column '" + name + "'");
      try {
        ex.fields[placeholder] = json_scalar(*it);
      } catch (const DatasetError&) {
        throw DatasetError(where(path, line) + "column '" + name + "' is not text");
      }
    }
    const auto it = obj.find(schema.label_column);
    if (it == obj.end()) throw DatasetError(where(path, line) + "missing column '" + schema.label_column + "'");
    std::string label;
    try {
      label = json_scalar(*it);
    } catch (const DatasetError&) {
      throw DatasetError(where(path, line) + "unparseable label " + it->dump());
    }
    set_label(ex, label, schema, path, line);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace

DataFormat parse_data_format(std::string_view name) {
  if (name == "tsv") return DataFormat::tsv;
  if (name == "jsonl") return DataFormat::jsonl;
  throw DatasetError("unknown data format '" + std::string(name) + "' (expected tsv or jsonl)");
}

DataFormat data_format_for(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".json" ? DataFormat::jsonl : DataFormat::tsv;
}

DatasetSchema builtin_schema(std::string_view task) {
  DatasetSchema s;
  const std::vector<std::string> binary = {"0", "1"};
  if (task == "sst2" || task == "mr" || task == "cr" || task == "mpqa" || task == "subj" || task == "cola") {
    s.text_columns = {{"input", "sentence"}};
    s.label_space = binary;
  } else if (task == "sst5") {
    s.text_columns = {{"input", "sentence"}};
    s.label_space = {"0", "1", "2", "3", "4"};
  } else if (task == "trec") {
    s.text_columns = {{"input", "sentence"}};
    s.label_space = {"0", "1", "2", "3", "4", "5"};
  } else if (task == "mnli" || task == "snli") {
    s.text_columns = {{"premise", "premise"}, {"hypothesis", "hypothesis"}};
    s.label_space = {"entailment", "neutral", "contradiction"};
  } else if (task == "qnli") {
    s.text_columns = {{"premise", "question"}, {"hypothesis", "sentence"}};
    s.label_space = {"entailment", "not_entailment"};
  } else if (task == "rte") {
    s.text_columns = {{"premise", "sentence1"}, {"hypothesis", "sentence2"}};
    s.label_space = {"entailment", "not_entailment"};
  } else if (task == "mrpc") {
    s.text_columns = {{"question1", "sentence1"}, {"question2", "sentence2"}};
    s.label_space = binary;
  } else if (task == "qqp") {
    s.text_columns = {{"question1", "question1"}, {"question2", "question2"}};
    s.label_space = binary;
  } else if (task == "stsb") {
    s.text_columns = {{"sentence1", "sentence1"}, {"sentence2", "sentence2"}};
    s.kind = TaskKind::regression;
    s.lower = 0.0;
    s.upper = 5.0;
  } else {
    throw DatasetError("no built-in schema for task '" + std::string(task) + "'");
  }
  return s;
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format, const DatasetSchema& schema,
                     std::string task) {
  if (schema.kind == TaskKind::regression && !(schema.lower < schema.upper)) {
    throw DatasetError("schema: regression bounds must satisfy lower < upper");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  Dataset data = format == DataFormat::tsv ? load_tsv(path, in, schema, std::move(task))
                                           : load_jsonl(path, in, schema, std::move(task));
  if (data.examples.empty()) throw DatasetError(path.string() + ": empty file");
  return data;
}

Dataset sample_subset(const Dataset& dataset, std::size_t n, std::uint64_t seed) {
  if (dataset.examples.size() <= n) return dataset;
  std::vector<std::size_t> order(dataset.examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  order.resize(n);
  std::sort(order.begin(), order.end());
  Dataset out = dataset;
  out.examples.clear();
  for (std::size_t i : order) out.examples.push_back(dataset.examples[i]);
  return out;
}

std::size_t subset_size_for_task(std::string_view task) {
  if (task == "mr" || task == "cr" || task == "mpqa" || task == "subj") return 2000;
  return 0;
}

MetricKind default_metric(std::string_view task) {
  if (task == "cola") return MetricKind::matthews;
  if (task == "mrpc" || task == "qqp") return MetricKind::f1;
  if (task == "stsb") return MetricKind::pearson;
  return MetricKind::accuracy;
}

template <typename T>
EvalReport run_eval(const Dataset& dataset, const Template& tmpl, const Parameters<T>& params, const Vocab& vocab,
                    const EvalOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  tmpl.validate();
  if (tmpl.kind != dataset.kind) {
    throw EvalError("template " + tmpl.name + " is " + std::string(task_kind_name(tmpl.kind)) + " but dataset " +
                    dataset.task + " is " + std::string(task_kind_name(dataset.kind)));
  }
  const std::size_t n = dataset.examples.size();
  if (n == 0) throw EvalError("dataset " + dataset.task + " has no examples");

  EvalReport report;
  report.task = dataset.task;
  report.template_id = tmpl.name;
  report.model_id = options.model_id;
  report.kind = tmpl.kind;
  report.example_count = n;
  report.seed = options.seed;
  report.golds.resize(n);

  const bool classification = tmpl.kind == TaskKind::classification;
  if (classification) {
    report.class_labels = tmpl.label_values;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& gold = dataset.examples[i].gold;
      const auto it = std::find(tmpl.label_values.begin(), tmpl.label_values.end(), gold);
      if (it == tmpl.label_values.end()) {
        throw EvalError("example " + std::to_string(i) + ": gold label '" + gold + "' is not a label value of template " +
                        tmpl.name);
      }
      report.golds[i] = static_cast<double>(it - tmpl.label_values.begin());
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) report.golds[i] = dataset.examples[i].value;
  }

  std::vector<Prediction> predictions(n);
  const ScoringOptions scoring{options.max_len, options.policy};
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = n;
  std::string error_message;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        predictions[i] = predict(dataset.examples[i].fields, tmpl, params, vocab, scoring);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error_message = e.what();
        }
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error_index < n) throw EvalError("example " + std::to_string(error_index) + ": " + error_message);

  report.predictions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    report.predictions[i] = classification ? static_cast<double>(predictions[i].label) : predictions[i].value;
    report.degenerate_count += predictions[i].degenerate;
  }

  // Aggregate over a canonical ordering so dataset order cannot change rounding.
  std::vector<std::pair<double, double>> pairs(n);
  for (std::size_t i = 0; i < n; ++i) pairs[i] = {report.predictions[i], report.golds[i]};
  std::sort(pairs.begin(), pairs.end());
  std::vector<double> preds(n), golds(n);
  for (std::size_t i = 0; i < n; ++i) std::tie(preds[i], golds[i]) = pairs[i];

  int positive = 1;
  if (classification) {
    const std::size_t m = tmpl.num_classes();
    report.confusion.assign(m, std::vector<long>(m, 0));
    for (std::size_t i = 0; i < n; ++i) {
      ++report.confusion[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];
    }
    const auto it = std::find(tmpl.label_values.begin(), tmpl.label_values.end(), options.positive_label);
    if (it != tmpl.label_values.end()) positive = static_cast<int>(it - tmpl.label_values.begin());
  }

  std::vector<MetricKind> kinds = options.metrics;
  if (kinds.empty()) kinds.push_back(default_metric(dataset.task));
  for (MetricKind kind : kinds) {
    if ((kind == MetricKind::pearson) == classification) {
      throw EvalError("metric " + std::string(metric_name(kind)) + " does not apply to a " +
                      std::string(task_kind_name(tmpl.kind)) + " task");
    }
    const MetricValue v = compute_metric(kind, preds, golds, positive);
    report.metrics.push_back({std::string(metric_name(kind)), v.value, v.undefined});
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

template EvalReport run_eval<float>(const Dataset&, const Template&, const Parameters<float>&, const Vocab&,
                                    const EvalOptions&);
template EvalReport run_eval<double>(const Dataset&, const Template&, const Parameters<double>&, const Vocab&,
                                     const EvalOptions&);

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["task"] = r.task;
  j["template"] = r.template_id;
  j["model"] = r.model_id;
  j["kind"] = std::string(task_kind_name(r.kind));
  j["examples"] = r.example_count;
  auto metrics = nlohmann::ordered_json::array();
  for (const auto& m : r.metrics) {
    nlohmann::ordered_json entry;
    entry["name"] = m.name;
    entry["value"] = m.value;
    if (m.undefined) entry["undefined"] = true;
    metrics.push_back(entry);
  }
  j["metrics"] = metrics;
  if (r.kind == TaskKind::classification) {
    j["labels"] = r.class_labels;
    j["confusion"] = r.confusion;
  }
  j["degenerate"] = r.degenerate_count;
  j["seed"] = r.seed;
  return j.dump();
}

void write_report_table(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << std::left << std::setw(8) << "task" << std::setw(10) << "metric" << std::right << std::setw(9) << "value"
      << std::setw(9) << "n" << std::setw(11) << "time(s)" << "  model\n";
  for (const auto& r : reports) {
    for (const auto& m : r.metrics) {
      std::ostringstream value;
      value << std::fixed << std::setprecision(2) << 100.0 * m.value << (m.undefined ? "*" : "");
      out << std::left << std::setw(8) << r.task << std::setw(10) << m.name << std::right << std::setw(9)
          << value.str() << std::setw(9) << r.example_count << std::setw(11) << std::fixed << std::setprecision(2)
          << r.wall_clock_seconds << "  " << r.model_id << '\n';
    }
  }
}

}  // namespace rtd
