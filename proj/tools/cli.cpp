#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtd/eval.hpp"
#include "rtd/pretrain.hpp"
#include "rtd/weights.hpp"

namespace rtd::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelOptions {
  std::string weights;
  std::string vocab;
  bool zero_weights = false;
  bool lowercase = false;
  bool cased = false;
  std::string precision = "float";
};

struct TaskOptions {
  std::string task;
  std::string template_file;
  std::size_t max_len = 0;
};

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

void add_model_options(CLI::App* app, ModelOptions& m) {
  app->add_option("--weights", m.weights, "RTDW weights file (default: $RTD_MODEL_DIR/model.rtdw)");
  app->add_option("--vocab", m.vocab, "WordPiece vocabulary, one token per line (default: $RTD_MODEL_DIR/vocab.txt)");
  app->add_flag("--zero-weights", m.zero_weights, "Use an all-zero discriminator sized to the vocabulary");
  auto* lower = app->add_flag("--lowercase", m.lowercase, "Lowercase and strip accents before WordPiece");
  app->add_flag("--cased", m.cased, "Keep case")->excludes(lower);
  app->add_option("--precision", m.precision, "Arithmetic for the forward pass")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();
}

void add_task_options(CLI::App* app, TaskOptions& t) {
  app->add_option("--task", t.task, "Built-in task and template name");
  app->add_option("--template-file", t.template_file, "Custom template file")->check(CLI::ExistingFile);
  app->add_option("--max-len", t.max_len, "Maximum sequence length (0: model limit)")->capture_default_str();
}

void add_common_options(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
  app->add_option("--threads", c.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);
}

// Keys outside any section belong to the subcommand being run.
class SubcommandConfig : public CLI::ConfigINI {
 public:
  explicit SubcommandConfig(const CLI::App& app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    const auto subs = app_.get_subcommands();
    if (subs.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty() && item.name != "++" && item.name != "--") item.parents = {subs.front()->get_name()};
    }
    return items;
  }

 private:
  const CLI::App& app_;
};

std::string model_dir_path(const std::string& explicit_path, const char* file) {
  if (!explicit_path.empty()) return explicit_path;
  if (const char* dir = std::getenv("RTD_MODEL_DIR"); dir && *dir) return (fs::path(dir) / file).string();
  return {};
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required (or set RTD_MODEL_DIR)");
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

Vocab open_vocab(const ModelOptions& m) {
  const std::string path = model_dir_path(m.vocab, "vocab.txt");
  require_file(path, "--vocab");
  std::optional<bool> lowercase;
  if (m.lowercase) lowercase = true;
  if (m.cased) lowercase = false;
  return load_vocab(path, lowercase);
}

template <typename T>
Parameters<T> open_model(const ModelOptions& m, const Vocab& vocab, std::size_t max_len, std::string& model_id) {
  if (m.zero_weights) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.max_positions = std::max<int>(512, static_cast<int>(max_len));
    cfg.pad_token_id = vocab.special().pad;
    model_id = "zero";
    return Parameters<T>::zeros(cfg);
  }
  const std::string path = model_dir_path(m.weights, "model.rtdw");
  require_file(path, "--weights");
  model_id = fs::path(path).filename().string();
  auto params = from_container<T>(load_weights(path));
  if (params.config.head_role != HeadRole::discriminator) {
    throw std::runtime_error(path + " holds a generator; a discriminator is required");
  }
  if (static_cast<std::size_t>(params.config.vocab_size) != vocab.size()) {
    throw std::runtime_error("vocabulary has " + std::to_string(vocab.size()) + " tokens but the model expects " +
                             std::to_string(params.config.vocab_size));
  }
  return params;
}

Template open_template(const TaskOptions& t) {
  if (!t.template_file.empty()) return load_template(t.template_file);
  if (t.task.empty()) throw UsageError("one of --task or --template-file is required");
  return builtin_template(t.task);
}

std::string task_name(const TaskOptions& t, const Template& tmpl) { return t.task.empty() ? tmpl.name : t.task; }

void print_resolved(std::ostream& err, const CLI::App* sub) {
  err << "# " << sub->get_name() << " resolved configuration\n" << sub->config_to_str(true, false);
}

Fields parse_fields(const std::vector<std::string>& pairs) {
  Fields fields;
  for (const auto& p : pairs) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--field expects name=value, got '" + p + "'");
    fields[p.substr(0, eq)] = p.substr(eq + 1);
  }
  return fields;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  ModelOptions model;
  TaskOptions task;
  std::string text;
  std::vector<std::string> fields;
};

template <typename T>
int do_predict(const PredictArgs& a, const Common& c, std::ostream& out) {
  const Template tmpl = open_template(a.task);
  const Vocab vocab = open_vocab(a.model);
  std::string model_id;
  const auto params = open_model<T>(a.model, vocab, a.task.max_len, model_id);
  Fields fields = parse_fields(a.fields);
  if (!a.text.empty()) fields["input"] = a.text;
  const Prediction pred = predict(fields, tmpl, params, vocab, {a.task.max_len, DegeneratePolicy::clamp});

  nlohmann::ordered_json j;
  j["task"] = task_name(a.task, tmpl);
  j["template"] = tmpl.name;
  j["model"] = model_id;
  if (tmpl.kind == TaskKind::classification) {
    j["label"] = pred.label;
    j["label_word"] = tmpl.label_words[static_cast<std::size_t>(pred.label)];
    j["label_value"] = tmpl.label_values[static_cast<std::size_t>(pred.label)];
    j["probs"] = pred.class_probs;
  } else {
    j["value"] = pred.value;
  }
  j["p_replaced"] = pred.raw_p_replaced;
  if (pred.degenerate) j["degenerate"] = true;
  j["seed"] = c.seed;
  out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct DataArgs {
  std::string data;
  std::string format;
  std::vector<std::string> text_columns;
  std::string label_column;
};

void add_data_options(CLI::App* app, DataArgs& d, bool required) {
  auto* opt = app->add_option("--data", d.data, "Dataset file (TSV with header, or JSONL)")->check(CLI::ExistingFile);
  if (required) opt->required();
  app->add_option("--format", d.format, "tsv or jsonl (default: from the file extension)")
      ->check(CLI::IsMember({"tsv", "jsonl"}));
  app->add_option("--text-column", d.text_columns, "Placeholder-to-column mapping, placeholder=column");
  app->add_option("--label-column", d.label_column, "Label column name");
}

Dataset open_dataset(const DataArgs& d, const std::string& task, const Template& tmpl) {
  DatasetSchema schema;
  try {
    schema = builtin_schema(task);
  } catch (const DatasetError&) {
    for (const auto& f : tmpl.fields()) schema.text_columns[f] = f;
    schema.kind = tmpl.kind;
    schema.label_space = tmpl.label_values;
    schema.lower = tmpl.lower;
    schema.upper = tmpl.upper;
  }
  for (const auto& [placeholder, column] : parse_fields(d.text_columns)) schema.text_columns[placeholder] = column;
  if (!d.label_column.empty()) schema.label_column = d.label_column;
  const DataFormat format = d.format.empty() ? data_format_for(d.data) : parse_data_format(d.format);
  return load_dataset(d.data, format, schema, task);
}

struct EvaluateArgs {
  ModelOptions model;
  TaskOptions task;
  DataArgs data;
  std::string output;
  std::vector<std::string> metrics;
  std::string positive_label = "1";
  long subset = -1;
  std::uint64_t subset_seed = kSubsetSeed;
};

template <typename T>
int do_evaluate(const EvaluateArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const Template tmpl = open_template(a.task);
  const std::string task = task_name(a.task, tmpl);
  const Vocab vocab = open_vocab(a.model);
  EvalOptions options;
  const auto params = open_model<T>(a.model, vocab, a.task.max_len, options.model_id);
  Dataset data = open_dataset(a.data, task, tmpl);
  const std::size_t subset = a.subset >= 0 ? static_cast<std::size_t>(a.subset) : subset_size_for_task(task);
  if (subset > 0) data = sample_subset(data, subset, a.subset_seed);

  for (const auto& m : a.metrics) options.metrics.push_back(parse_metric(m));
  options.threads = c.threads;
  options.max_len = a.task.max_len;
  options.policy = DegeneratePolicy::clamp;
  options.positive_label = a.positive_label;
  options.seed = c.seed;
  err << "evaluating " << data.examples.size() << " examples\n";
  const EvalReport report = run_eval(data, tmpl, params, vocab, options);

  write_report_table(out, {report});
  const std::string line = report_json(report);
  if (a.output.empty()) {
    out << line << '\n';
  } else {
    std::ofstream file(a.output, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + a.output);
    file << line << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// pretrain-toy

struct PretrainArgs {
  TrainConfig config;
  std::string train_config;
  std::string out_dir;
  long log_every = 100;
  int eval_sequences = 200;
};

void save_toy_vocab(const Vocab& vocab, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

int do_pretrain(PretrainArgs a, const CLI::App* sub, const Common& c, std::ostream& out, std::ostream& err) {
  TrainConfig cfg = a.train_config.empty() ? TrainConfig{} : load_train_config(a.train_config);
  // Explicit flags override the key=value file.
  auto overridden = [&](const char* flag) { return sub->count(flag) > 0; };
  if (overridden("--steps")) cfg.steps = a.config.steps;
  if (overridden("--batch-size")) cfg.batch_size = a.config.batch_size;
  if (overridden("--learning-rate")) cfg.learning_rate = a.config.learning_rate;
  if (overridden("--disc-weight")) cfg.disc_weight = a.config.disc_weight;
  if (overridden("--mask-rate")) cfg.mask_rate = a.config.mask_rate;
  if (overridden("--vocab-size")) cfg.vocab_size = a.config.vocab_size;
  if (overridden("--seq-len")) cfg.sequence_length = a.config.sequence_length;
  if (overridden("--layers")) cfg.layers = a.config.layers;
  if (overridden("--hidden")) cfg.hidden = a.config.hidden;
  if (overridden("--heads")) cfg.heads = a.config.heads;
  if (overridden("--intermediate")) cfg.intermediate = a.config.intermediate;
  if (overridden("--successors")) cfg.successors = a.config.successors;
  if (overridden("--init-stddev")) cfg.init_stddev = a.config.init_stddev;
  if (a.train_config.empty() || overridden("--seed")) cfg.seed = c.seed;
  err << "# training\n" << format_train_config(cfg);

  const PretrainResult result = run_pretraining(cfg, [&](const LossRecord& r) {
    if (a.log_every > 0 && (r.step + 1) % a.log_every == 0) {
      err << "step " << r.step + 1 << "/" << cfg.steps << " L_MLM=" << r.mlm << " L_Disc=" << r.disc << '\n';
    }
  });

  const Vocab vocab = toy_vocab(cfg.vocab_size);
  nlohmann::ordered_json summary;
  summary["steps"] = cfg.steps;
  summary["seed"] = cfg.seed;
  if (!result.history.empty()) {
    const std::size_t window = std::min<std::size_t>(50, result.history.size());
    summary["disc_initial"] = mean_disc_loss(result.history, 0, window);
    summary["disc_final"] = mean_disc_loss(result.history, result.history.size() - window, window);
    double mlm = 0.0;
    for (std::size_t i = result.history.size() - window; i < result.history.size(); ++i) mlm += result.history[i].mlm;
    summary["mlm_final"] = mlm / static_cast<double>(window);
  }
  if (a.eval_sequences > 0) {
    const MarkovCorpus corpus(cfg.vocab_size, cfg.successors, cfg.seed);
    Rng held_out(cfg.seed + 1000);
    std::vector<std::vector<int>> sequences;
    for (int i = 0; i < a.eval_sequences; ++i) sequences.push_back(corpus.sample(cfg.sequence_length, held_out));
    summary["held_out_auc"] = detection_auc(result.state.generator, result.state.discriminator,
                                            std::span<const std::vector<int>>(sequences), vocab.special(),
                                            cfg.mask_rate, held_out);
  }

  if (!a.out_dir.empty()) {
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    save_weights(to_container(result.state.discriminator), dir / "discriminator.rtdw");
    save_weights(to_container(result.state.generator), dir / "generator.rtdw");
    save_toy_vocab(vocab, dir / "vocab.txt");
    std::ofstream csv(dir / "losses.csv", std::ios::binary | std::ios::trunc);
    write_loss_csv(csv, result.history);
    std::ofstream(dir / "train.cfg", std::ios::binary | std::ios::trunc) << format_train_config(cfg);
  }
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneArgs {
  ModelOptions model;
  TaskOptions task;
  DataArgs data;
  std::string output;
  int k = 16;
  int epochs = 10;
  double learning_rate = 1e-4;
  int batch_size = 8;
  std::string loss = "class_nll";
};

template <typename T>
int do_finetune(const FinetuneArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
  const Template tmpl = open_template(a.task);
  if (tmpl.kind != TaskKind::classification) throw UsageError("finetune needs a classification template");
  const std::string task = task_name(a.task, tmpl);
  const Vocab vocab = open_vocab(a.model);
  std::string model_id;
  const auto params = open_model<T>(a.model, vocab, a.task.max_len, model_id);
  const Dataset data = open_dataset(a.data, task, tmpl);

  std::vector<LabeledExample> examples;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& ex = data.examples[i];
    const auto it = std::find(tmpl.label_values.begin(), tmpl.label_values.end(), ex.gold);
    if (it == tmpl.label_values.end()) {
      throw std::runtime_error("example " + std::to_string(i) + ": label '" + ex.gold + "' is not a template label value");
    }
    examples.push_back({ex.fields, static_cast<int>(it - tmpl.label_values.begin())});
  }

  FinetuneOptions options;
  options.k_per_class = a.k;
  options.epochs = a.epochs;
  options.learning_rate = a.learning_rate;
  options.batch_size = a.batch_size;
  options.seed = c.seed;
  options.max_len = a.task.max_len;
  options.loss = a.loss == "binary" ? FinetuneLoss::label_word_binary : FinetuneLoss::class_nll;
  const auto result = finetune_prompt(params, std::span<const LabeledExample>(examples), tmpl, vocab, options);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    err << "epoch " << e << " loss " << result.epoch_losses[e] << '\n';
  }
  save_weights(to_container(result.discriminator), a.output);

  nlohmann::ordered_json j;
  j["task"] = task;
  j["template"] = tmpl.name;
  j["model"] = model_id;
  j["train_examples"] = result.train_set.size();
  j["epoch_losses"] = result.epoch_losses;
  j["output"] = a.output;
  j["seed"] = c.seed;
  out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect-weights

struct InspectArgs {
  std::string weights;
  std::string parity_inputs;
  std::string parity_csv;
  double tolerance = 1e-3;
};

int do_inspect(const InspectArgs& a, std::ostream& out) {
  const std::string path = model_dir_path(a.weights, "model.rtdw");
  require_file(path, "--weights");
  const WeightContainer container = load_weights(path);
  const ModelConfig& cfg = container.config;
  out << "role " << head_role_name(cfg.head_role) << "\nlayers " << cfg.num_layers << "\nhidden " << cfg.hidden
      << "\nheads " << cfg.heads << "\nintermediate " << cfg.intermediate << "\nvocab " << cfg.vocab_size
      << "\nmax_positions " << cfg.max_positions << "\nembedding_size " << cfg.embedding_size << "\ntype_vocab "
      << cfg.type_vocab_size << "\nlayer_norm_eps " << cfg.layer_norm_eps << "\npad_token_id " << cfg.pad_token_id
      << '\n';
  std::size_t total = 0;
  for (const auto& entry : container.manifest()) {
    if (entry.dtype != "f32") continue;
    out << std::left << std::setw(64) << entry.name << ' ' << shape_string(entry.shape) << " @" << entry.offset << '\n';
    total += shape_size(entry.shape);
  }
  out << "parameters " << total << '\n';
  if (a.parity_inputs.empty() != a.parity_csv.empty()) {
    throw UsageError("--parity-inputs and --parity-csv go together");
  }
  if (!a.parity_inputs.empty()) {
    const auto params = from_container<double>(container);
    const double diff =
        parity_max_abs_diff(params, load_parity_inputs(a.parity_inputs), load_parity_reference(a.parity_csv));
    out << "parity_max_abs_diff " << std::setprecision(8) << diff << '\n';
    if (!(diff <= a.tolerance)) {
      throw std::runtime_error("parity difference " + std::to_string(diff) + " exceeds " + std::to_string(a.tolerance));
    }
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-based zero-shot and few-shot classification with replaced token detection", "rtd"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with option defaults for the subcommand; flags take precedence");
  app.config_formatter(std::make_shared<SubcommandConfig>(app));

  Common common;
  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Classify or score one input");
  add_model_options(predict, predict_args.model);
  add_task_options(predict, predict_args.task);
  add_common_options(predict, common);
  predict->add_option("--text", predict_args.text, "Text for the {input} placeholder");
  predict->add_option("--field", predict_args.fields, "Placeholder value, name=value (repeatable)");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Zero-shot evaluation over a dataset");
  add_model_options(evaluate, eval_args.model);
  add_task_options(evaluate, eval_args.task);
  add_common_options(evaluate, common);
  add_data_options(evaluate, eval_args.data, true);
  evaluate->add_option("--output", eval_args.output, "JSON-lines report path (default: standard output)");
  evaluate->add_option("--metric", eval_args.metrics, "accuracy, matthews, f1 or pearson (repeatable)");
  evaluate->add_option("--positive-label", eval_args.positive_label, "Dataset label F1 and Matthews treat as positive")
      ->capture_default_str();
  evaluate->add_option("--subset", eval_args.subset, "Sample this many examples (0: all; default: per task)");
  evaluate->add_option("--subset-seed", eval_args.subset_seed, "Seed for --subset sampling")->capture_default_str();

  PretrainArgs pre_args;
  auto* pretrain = app.add_subcommand("pretrain-toy", "RTD pre-training on a synthetic Markov corpus");
  add_common_options(pretrain, common);
  pretrain->add_option("--train-config", pre_args.train_config, "key=value training configuration")
      ->check(CLI::ExistingFile);
  pretrain->add_option("--steps", pre_args.config.steps)->capture_default_str();
  pretrain->add_option("--batch-size", pre_args.config.batch_size)->capture_default_str();
  pretrain->add_option("--learning-rate", pre_args.config.learning_rate)->capture_default_str();
  pretrain->add_option("--disc-weight", pre_args.config.disc_weight, "Weight on the detection loss")
      ->capture_default_str();
  pretrain->add_option("--mask-rate", pre_args.config.mask_rate)->capture_default_str();
  pretrain->add_option("--vocab-size", pre_args.config.vocab_size)->capture_default_str();
  pretrain->add_option("--seq-len", pre_args.config.sequence_length)->capture_default_str();
  pretrain->add_option("--layers", pre_args.config.layers)->capture_default_str();
  pretrain->add_option("--hidden", pre_args.config.hidden)->capture_default_str();
  pretrain->add_option("--heads", pre_args.config.heads)->capture_default_str();
  pretrain->add_option("--intermediate", pre_args.config.intermediate)->capture_default_str();
  pretrain->add_option("--successors", pre_args.config.successors, "Successors per token in the Markov chain")
      ->capture_default_str();
  pretrain->add_option("--init-stddev", pre_args.config.init_stddev)->capture_default_str();
  pretrain->add_option("--out-dir", pre_args.out_dir, "Writes weights, vocab and losses.csv here");
  pretrain->add_option("--log-every", pre_args.log_every, "Progress line interval (0: quiet)")->capture_default_str();
  pretrain->add_option("--eval-sequences", pre_args.eval_sequences, "Held-out sequences for detection AUC")
      ->capture_default_str();

  FinetuneArgs ft_args;
  auto* finetune = app.add_subcommand("finetune", "Few-shot prompt fine-tuning of a discriminator");
  add_model_options(finetune, ft_args.model);
  add_task_options(finetune, ft_args.task);
  add_common_options(finetune, common);
  add_data_options(finetune, ft_args.data, true);
  finetune->add_option("--output", ft_args.output, "Fine-tuned RTDW path")->required();
  finetune->add_option("--k", ft_args.k, "Examples per class")->capture_default_str();
  finetune->add_option("--epochs", ft_args.epochs)->capture_default_str();
  finetune->add_option("--learning-rate", ft_args.learning_rate)->capture_default_str();
  finetune->add_option("--batch-size", ft_args.batch_size)->capture_default_str();
  finetune->add_option("--loss", ft_args.loss)->check(CLI::IsMember({"class_nll", "binary"}))->capture_default_str();

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect-weights", "Print an RTDW container's config and manifest");
  inspect->add_option("--weights", inspect_args.weights, "RTDW file (default: $RTD_MODEL_DIR/model.rtdw)");
  inspect->add_option("--parity-inputs", inspect_args.parity_inputs, "Token-id sequences, one per line")
      ->check(CLI::ExistingFile);
  inspect->add_option("--parity-csv", inspect_args.parity_csv, "Reference P(replaced) CSV")->check(CLI::ExistingFile);
  inspect->add_option("--tolerance", inspect_args.tolerance, "Maximum parity difference")->capture_default_str();

  for (auto* sub : {predict, evaluate, pretrain, finetune, inspect}) sub->fallthrough();

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.push_back("rtd");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  print_resolved(err, sub);
  try {
    if (sub == predict) {
      return predict_args.model.precision == "double" ? do_predict<double>(predict_args, common, out)
                                                      : do_predict<float>(predict_args, common, out);
    }
    if (sub == evaluate) {
      return eval_args.model.precision == "double" ? do_evaluate<double>(eval_args, common, out, err)
                                                   : do_evaluate<float>(eval_args, common, out, err);
    }
    if (sub == pretrain) return do_pretrain(pre_args, pretrain, common, out, err);
    if (sub == finetune) {
      return ft_args.model.precision == "double" ? do_finetune<double>(ft_args, common, out, err)
                                                 : do_finetune<float>(ft_args, common, out, err);
    }
    return do_inspect(inspect_args, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace rtd::cli
