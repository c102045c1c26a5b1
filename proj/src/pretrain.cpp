#include "rtd/pretrain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rtd/metrics.hpp"

namespace rtd {

// ---------------------------------------------------------------------------
// Masking and corruption

std::size_t mask_count(std::size_t maskable, double rate) {
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(maskable) + 0.5));
  return std::min(maskable, std::max<std::size_t>(1, k));
}

bool is_maskable(int id, const SpecialIds& special) {
  return id != special.cls && id != special.sep && id != special.pad && id != special.mask;
}

MaskPlan make_mask_plan(std::span<const int> ids, const SpecialIds& special, double rate, Rng& rng) {
  std::vector<int> candidates;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (is_maskable(ids[t], special)) candidates.push_back(static_cast<int>(t));
  }
  if (candidates.empty()) throw TrainingError("make_mask_plan: sequence has no maskable tokens");
  MaskPlan plan;
  plan.k = mask_count(candidates.size(), rate);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < plan.k; ++i) {
    const std::size_t j = i + rng.index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  plan.positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(plan.k));
  std::sort(plan.positions.begin(), plan.positions.end());
  return plan;
}

CorruptedBatch mask_tokens(std::span<const int> ids, std::span<const int> segment_ids, const MaskPlan& plan,
                           int mask_id) {
  if (ids.size() != segment_ids.size()) throw TrainingError("mask_tokens: ids and segment ids differ in length");
  CorruptedBatch batch;
  batch.original.assign(ids.begin(), ids.end());
  batch.segment_ids.assign(segment_ids.begin(), segment_ids.end());
  batch.masked_positions = plan.positions;
  batch.x_masked = batch.original;
  for (int pos : plan.positions) {
    if (pos < 0 || static_cast<std::size_t>(pos) >= ids.size()) {
      throw TrainingError("mask_tokens: position " + std::to_string(pos) + " outside sequence");
    }
    batch.x_masked[static_cast<std::size_t>(pos)] = mask_id;
  }
  batch.x_corrupt = batch.original;
  batch.rtd_labels.assign(ids.size(), TokenLabel::original);
  return batch;
}

void apply_replacements(CorruptedBatch& batch, std::span<const int> sampled) {
  if (sampled.size() != batch.masked_positions.size()) {
    throw TrainingError("apply_replacements: " + std::to_string(sampled.size()) + " samples for " +
                        std::to_string(batch.masked_positions.size()) + " masked positions");
  }
  batch.x_corrupt = batch.original;
  batch.rtd_labels.assign(batch.original.size(), TokenLabel::original);
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const auto pos = static_cast<std::size_t>(batch.masked_positions[i]);
    batch.x_corrupt[pos] = sampled[i];
    batch.rtd_labels[pos] = sampled[i] == batch.original[pos] ? TokenLabel::original : TokenLabel::replaced;
  }
}

template <typename T>
CorruptedBatch corrupt(std::span<const int> ids, std::span<const int> segment_ids, const MaskPlan& plan,
                       const Parameters<T>& generator, int mask_id, Rng& rng) {
  CorruptedBatch batch = mask_tokens(ids, segment_ids, plan, mask_id);
  const Matrix<T> probs = generator_forward<T>(batch.x_masked, batch.segment_ids, generator, batch.masked_positions);
  std::vector<int> sampled(batch.masked_positions.size());
  for (std::size_t i = 0; i < sampled.size(); ++i) sampled[i] = sample_categorical(probs.row(static_cast<Eigen::Index>(i)), rng);
  apply_replacements(batch, sampled);
  return batch;
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
T mlm_loss(const CorruptedBatch& batch, const Parameters<T>& generator, Parameters<T>* grad, T grad_scale) {
  if (batch.masked_positions.empty()) throw TrainingError("mlm_loss: no masked positions");
  EncoderCache<T> enc_cache;
  GeneratorHeadCache<T> head_cache;
  const Matrix<T> hidden = encode(generator, batch.x_masked, batch.segment_ids, grad ? &enc_cache : nullptr);
  const Matrix<T> logits = generator_logits(generator, hidden, batch.masked_positions, &head_cache);
  const auto k = static_cast<Eigen::Index>(batch.masked_positions.size());
  Matrix<T> d_logits = grad ? row_softmax(logits) : Matrix<T>();
  T loss = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const int target = batch.original[static_cast<std::size_t>(batch.masked_positions[static_cast<std::size_t>(i)])];
    const T peak = logits.row(i).maxCoeff();
    const T log_norm = peak + std::log((logits.row(i).array() - peak).exp().sum());
    loss += log_norm - logits(i, target);
    if (grad) d_logits(i, target) -= T(1);
  }
  loss /= static_cast<T>(k);
  if (grad) {
    d_logits *= grad_scale / static_cast<T>(k);
    const Matrix<T> d_hidden = generator_head_backward(generator, head_cache, d_logits, hidden.rows(), *grad);
    encode_backward(generator, enc_cache, d_hidden, *grad);
  }
  return loss;
}

template <typename T>
T disc_loss(const CorruptedBatch& batch, const Parameters<T>& discriminator, Parameters<T>* grad, T grad_scale) {
  if (batch.rtd_labels.size() != batch.x_corrupt.size()) throw TrainingError("disc_loss: label count mismatch");
  EncoderCache<T> enc_cache;
  DiscriminatorHeadCache<T> head_cache;
  const Matrix<T> hidden = encode(discriminator, batch.x_corrupt, batch.segment_ids, grad ? &enc_cache : nullptr);
  const Vector<T> logits = discriminator_logits(discriminator, hidden, &head_cache);

  const int pad = discriminator.config.pad_token_id;
  std::size_t counted = 0;
  for (int id : batch.x_corrupt) counted += id != pad;
  const bool all_pad = counted == 0;
  if (all_pad) counted = batch.x_corrupt.size();

  const T lo = static_cast<T>(kProbabilityClamp);
  const T hi = T(1) - lo;
  Vector<T> d_logits = Vector<T>::Zero(logits.size());
  T loss = 0;
  for (Eigen::Index t = 0; t < logits.size(); ++t) {
    if (!all_pad && batch.x_corrupt[static_cast<std::size_t>(t)] == pad) continue;
    const T p = sigmoid(logits(t));
    const T pc = std::clamp(p, lo, hi);
    const bool replaced = batch.rtd_labels[static_cast<std::size_t>(t)] == TokenLabel::replaced;
    loss -= replaced ? std::log(pc) : std::log(T(1) - pc);
    if (p > lo && p < hi) d_logits(t) = p - (replaced ? T(1) : T(0));
  }
  const T n = static_cast<T>(counted);
  loss /= n;
  if (grad) {
    d_logits *= grad_scale / n;
    const Matrix<T> d_hidden = discriminator_head_backward(discriminator, hidden, head_cache, d_logits, *grad);
    encode_backward(discriminator, enc_cache, d_hidden, *grad);
  }
  return loss;
}

double detection_cross_entropy(std::span<const double> p_replaced, std::span<const TokenLabel> labels) {
  if (p_replaced.size() != labels.size() || p_replaced.empty()) {
    throw TrainingError("detection_cross_entropy: size mismatch");
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const double pc = std::clamp(p_replaced[t], kProbabilityClamp, 1.0 - kProbabilityClamp);
    loss -= labels[t] == TokenLabel::replaced ? std::log(pc) : std::log(1.0 - pc);
  }
  return loss / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Optimization

template <typename T>
void adam_update(Parameters<T>& params, const Parameters<T>& grad, AdamState<T>& state, double learning_rate,
                 const AdamOptions& options) {
  ++state.steps;
  const T b1 = static_cast<T>(options.beta1), b2 = static_cast<T>(options.beta2);
  const T correction1 = T(1) - std::pow(b1, static_cast<T>(state.steps));
  const T correction2 = T(1) - std::pow(b2, static_cast<T>(state.steps));
  const T lr = static_cast<T>(learning_rate);
  const T eps = static_cast<T>(options.eps);
  for_each_param(
      [&](const std::string&, auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (T(1) - b1) * g;
        v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
      },
      params, grad, state.first, state.second);
}

double scheduled_learning_rate(double base, long step, long total_steps, double warmup_fraction) {
  const long warmup = std::max(1L, static_cast<long>(std::lround(warmup_fraction * static_cast<double>(total_steps))));
  if (step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

template <typename T>
StepLosses train_step(TrainState<T>& state, std::span<const std::vector<int>> batch, const StepOptions& options) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  if (!parameters_finite(state.generator) || !parameters_finite(state.discriminator)) {
    throw TrainingError("train_step: parameters are not finite at step " + std::to_string(state.step));
  }
  Parameters<T> gen_grad = Parameters<T>::zeros(state.generator.config);
  Parameters<T> disc_grad = Parameters<T>::zeros(state.discriminator.config);
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  StepLosses losses;
  for (const auto& ids : batch) {
    const std::vector<int> segments(ids.size(), 0);
    const MaskPlan plan = make_mask_plan(ids, options.special, options.mask_rate, state.rng);
    const CorruptedBatch corrupted = corrupt(ids, segments, plan, state.generator, options.special.mask, state.rng);
    losses.mlm += static_cast<double>(mlm_loss(corrupted, state.generator, &gen_grad, inv_batch));
    losses.disc += static_cast<double>(
        disc_loss(corrupted, state.discriminator, &disc_grad, static_cast<T>(options.disc_weight) * inv_batch));
  }
  losses.mlm /= static_cast<double>(batch.size());
  losses.disc /= static_cast<double>(batch.size());
  if (!std::isfinite(losses.mlm) || !std::isfinite(losses.disc)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss at step " << state.step << " (L_MLM=" << losses.mlm
        << ", L_Disc=" << losses.disc << ")";
    throw TrainingError(msg.str());
  }
  adam_update(state.generator, gen_grad, state.generator_opt, options.learning_rate, options.adam);
  adam_update(state.discriminator, disc_grad, state.discriminator_opt, options.learning_rate, options.adam);
  ++state.step;
  return losses;
}

// ---------------------------------------------------------------------------
// Toy corpus and pre-training driver

Vocab toy_vocab(int vocab_size) {
  if (vocab_size <= kToySpecialCount) throw TrainingError("toy_vocab: vocabulary too small");
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                     std::string(kSepToken), std::string(kMaskToken)};
  for (int i = 0; i < vocab_size - kToySpecialCount; ++i) tokens.push_back("w" + std::to_string(i));
  return Vocab::from_tokens(std::move(tokens), true);
}

MarkovCorpus::MarkovCorpus(int vocab_size, int successors, std::uint64_t seed) : vocab_size_(vocab_size) {
  const int content = vocab_size - kToySpecialCount;
  if (content < 2) throw TrainingError("MarkovCorpus: needs at least two content tokens");
  successors = std::clamp(successors, 1, content);
  Rng rng(seed);
  next_.resize(static_cast<std::size_t>(content));
  for (auto& row : next_) {
    std::vector<int> pool(static_cast<std::size_t>(content));
    for (int i = 0; i < content; ++i) pool[static_cast<std::size_t>(i)] = kToySpecialCount + i;
    rng.shuffle(pool.begin(), pool.end());
    double weight = 1.0, total = 0.0;
    for (int s = 0; s < successors; ++s) {
      row.emplace_back(pool[static_cast<std::size_t>(s)], weight);
      total += weight;
      weight *= 0.5;
    }
    for (auto& entry : row) entry.second /= total;
  }
}

double MarkovCorpus::transition(int from, int to) const {
  for (const auto& [id, p] : next_.at(static_cast<std::size_t>(from - kToySpecialCount))) {
    if (id == to) return p;
  }
  return 0.0;
}

std::vector<int> MarkovCorpus::sample(int length, Rng& rng) const {
  if (length < 3) throw TrainingError("MarkovCorpus: sequence length must be at least 3");
  const SpecialIds special{0, 1, 2, 3, 4};
  std::vector<int> seq;
  seq.reserve(static_cast<std::size_t>(length));
  seq.push_back(special.cls);
  int current = kToySpecialCount + static_cast<int>(rng.index(next_.size()));
  seq.push_back(current);
  while (static_cast<int>(seq.size()) < length - 1) {
    const auto& row = next_[static_cast<std::size_t>(current - kToySpecialCount)];
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = row.back().first;
    for (const auto& [id, p] : row) {
      acc += p;
      if (u < acc) {
        pick = id;
        break;
      }
    }
    current = pick;
    seq.push_back(current);
  }
  seq.push_back(special.sep);
  return seq;
}

namespace {

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V value{};
  const auto* end = text.data() + text.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<V>) {
    // from_chars for double is available in libstdc++ 11
    res = std::from_chars(text.data(), end, value);
  } else {
    res = std::from_chars(text.data(), end, value);
  }
  if (res.ec != std::errc() || res.ptr != end) {
    throw TrainingError("train config: bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

std::string_view trim_view(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

void set_train_option(TrainConfig& c, std::string_view key, std::string_view value) {
  auto as_int = [&] { return parse_number<int>(key, value); };
  auto as_long = [&] { return parse_number<long>(key, value); };
  auto as_double = [&] { return parse_number<double>(key, value); };
  if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "steps") c.steps = as_long();
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "learning_rate") c.learning_rate = as_double();
  else if (key == "warmup_fraction") c.warmup_fraction = as_double();
  else if (key == "mask_rate") c.mask_rate = as_double();
  else if (key == "disc_weight") c.disc_weight = as_double();
  else if (key == "adam_beta1") c.adam_beta1 = as_double();
  else if (key == "adam_beta2") c.adam_beta2 = as_double();
  else if (key == "adam_eps") c.adam_eps = as_double();
  else if (key == "vocab_size") c.vocab_size = as_int();
  else if (key == "sequence_length") c.sequence_length = as_int();
  else if (key == "successors") c.successors = as_int();
  else if (key == "layers") c.layers = as_int();
  else if (key == "hidden") c.hidden = as_int();
  else if (key == "heads") c.heads = as_int();
  else if (key == "intermediate") c.intermediate = as_int();
  else if (key == "embedding_size") c.embedding_size = as_int();
  else if (key == "generator_hidden") c.generator_hidden = as_int();
  else if (key == "generator_heads") c.generator_heads = as_int();
  else if (key == "generator_intermediate") c.generator_intermediate = as_int();
  else if (key == "max_positions") c.max_positions = as_int();
  else if (key == "init_stddev") c.init_stddev = as_double();
  else throw TrainingError("train config: unknown key '" + std::string(key) + "'");
}

TrainConfig parse_train_config(std::string_view text, TrainConfig base) {
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim_view(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw TrainingError("train config: line " + std::to_string(line_no) + " is not key=value");
    }
    set_train_option(base, trim_view(line.substr(0, eq)), trim_view(line.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot open train config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str(), base);
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "seed=" << c.seed << "\nsteps=" << c.steps << "\nbatch_size=" << c.batch_size
      << "\nlearning_rate=" << c.learning_rate << "\nwarmup_fraction=" << c.warmup_fraction
      << "\nmask_rate=" << c.mask_rate << "\ndisc_weight=" << c.disc_weight << "\nadam_beta1=" << c.adam_beta1
      << "\nadam_beta2=" << c.adam_beta2 << "\nadam_eps=" << c.adam_eps << "\nvocab_size=" << c.vocab_size
      << "\nsequence_length=" << c.sequence_length << "\nsuccessors=" << c.successors << "\nlayers=" << c.layers
      << "\nhidden=" << c.hidden << "\nheads=" << c.heads << "\nintermediate=" << c.intermediate
      << "\nembedding_size=" << c.embedding_size << "\ngenerator_hidden=" << c.generator_hidden
      << "\ngenerator_heads=" << c.generator_heads << "\ngenerator_intermediate=" << c.generator_intermediate
      << "\nmax_positions=" << c.max_positions << "\ninit_stddev=" << c.init_stddev << '\n';
  return out.str();
}

ModelConfig discriminator_config(const TrainConfig& c) {
  ModelConfig m;
  m.num_layers = c.layers;
  m.hidden = c.hidden;
  m.heads = c.heads;
  m.intermediate = c.intermediate;
  m.vocab_size = c.vocab_size;
  m.max_positions = std::max(c.max_positions, c.sequence_length);
  m.embedding_size = c.embedding_size > 0 ? c.embedding_size : c.hidden;
  m.head_role = HeadRole::discriminator;
  m.validate();
  return m;
}

ModelConfig generator_config(const TrainConfig& c) {
  ModelConfig m = discriminator_config(c);
  m.hidden = c.generator_hidden > 0 ? c.generator_hidden : std::max(1, c.hidden / 2);
  m.heads = c.generator_heads > 0 ? c.generator_heads : c.heads;
  m.intermediate = c.generator_intermediate > 0 ? c.generator_intermediate : std::max(1, c.intermediate / 2);
  m.head_role = HeadRole::generator;
  m.validate();
  return m;
}

PretrainResult run_pretraining(const TrainConfig& config, const std::function<void(const LossRecord&)>& on_step) {
  if (config.steps < 0 || config.batch_size < 1) throw TrainingError("pretraining: steps >= 0 and batch_size >= 1 required");
  const Vocab vocab = toy_vocab(config.vocab_size);
  Rng init(config.seed);
  auto generator = random_parameters<float>(generator_config(config), init, config.init_stddev);
  auto discriminator = random_parameters<float>(discriminator_config(config), init, config.init_stddev);
  PretrainResult result{TrainState<float>(std::move(generator), std::move(discriminator), config.seed + 1), {}};

  const MarkovCorpus corpus(config.vocab_size, config.successors, config.seed);
  Rng data_rng(config.seed + 2);
  StepOptions options;
  options.disc_weight = config.disc_weight;
  options.mask_rate = config.mask_rate;
  options.special = vocab.special();
  options.adam = {config.adam_beta1, config.adam_beta2, config.adam_eps};

  std::vector<std::vector<int>> batch(static_cast<std::size_t>(config.batch_size));
  for (long step = 0; step < config.steps; ++step) {
    for (auto& seq : batch) seq = corpus.sample(config.sequence_length, data_rng);
    options.learning_rate = scheduled_learning_rate(config.learning_rate, step, config.steps, config.warmup_fraction);
    const StepLosses losses = train_step(result.state, std::span<const std::vector<int>>(batch), options);
    result.history.push_back({step, losses.mlm, losses.disc});
    if (on_step) on_step(result.history.back());
  }
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const LossRecord> history) {
  out << "step,L_MLM,L_Disc\n";
  out << std::setprecision(9);
  for (const auto& r : history) out << r.step << ',' << r.mlm << ',' << r.disc << '\n';
}

double mean_disc_loss(std::span<const LossRecord> history, std::size_t begin, std::size_t window) {
  if (begin >= history.size() || window == 0) throw TrainingError("mean_disc_loss: empty window");
  const std::size_t end = std::min(history.size(), begin + window);
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) total += history[i].disc;
  return total / static_cast<double>(end - begin);
}

template <typename T>
double detection_auc(const Parameters<T>& generator, const Parameters<T>& discriminator,
                     std::span<const std::vector<int>> sequences, const SpecialIds& special, double mask_rate,
                     Rng& rng) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& ids : sequences) {
    const std::vector<int> segments(ids.size(), 0);
    const MaskPlan plan = make_mask_plan(ids, special, mask_rate, rng);
    const CorruptedBatch batch = corrupt(ids, segments, plan, generator, special.mask, rng);
    const auto out = discriminator_forward<T>(batch.x_corrupt, batch.segment_ids, discriminator);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (!is_maskable(ids[t], special)) continue;
      scores.push_back(out.p_replaced[t]);
      labels.push_back(batch.rtd_labels[t] == TokenLabel::replaced ? 1 : 0);
    }
  }
  return roc_auc(scores, labels);
}

// ---------------------------------------------------------------------------
// Prompt-based few-shot fine-tuning

std::vector<LabeledExample> select_k_per_class(std::span<const LabeledExample> examples, int k, int num_classes,
                                               std::uint64_t seed) {
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<int> taken(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  std::vector<LabeledExample> out;
  for (std::size_t i : order) {
    const int label = examples[i].label;
    if (label < 0 || label >= num_classes) {
      throw TrainingError("select_k_per_class: label " + std::to_string(label) + " outside " +
                          std::to_string(num_classes) + " classes");
    }
    if (taken[static_cast<std::size_t>(label)] < k) {
      ++taken[static_cast<std::size_t>(label)];
      out.push_back(examples[i]);
    }
  }
  return out;
}

template <typename T>
double prompt_loss(const Parameters<T>& discriminator, std::span<const LabeledExample> examples,
                   const Template& tmpl, const Vocab& vocab, FinetuneLoss kind, std::size_t max_len,
                   Parameters<T>* grad, T grad_scale) {
  if (examples.empty()) throw TrainingError("prompt_loss: no examples");
  if (tmpl.kind != TaskKind::classification) throw TrainingError("prompt_loss: needs a classification template");
  if (max_len == 0) max_len = static_cast<std::size_t>(discriminator.config.max_positions);
  const std::size_t classes = tmpl.num_classes();
  const T example_scale = grad_scale / static_cast<T>(examples.size());
  double total = 0.0;

  struct ClassPass {
    Encoding enc;
    EncoderCache<T> enc_cache;
    DiscriminatorHeadCache<T> head_cache;
    Matrix<T> hidden;
    Vector<T> probs;  // sigmoid of logits
    T mean_p = 0;
  };
  std::vector<ClassPass> passes(classes);

  for (const auto& ex : examples) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= classes) {
      throw TrainingError("prompt_loss: label " + std::to_string(ex.label) + " outside template classes");
    }
    for (std::size_t m = 0; m < classes; ++m) {
      auto& pass = passes[m];
      pass.enc = encode_prompt(tmpl, ex.fields, tmpl.label_words[m], vocab, max_len);
      pass.hidden = encode(discriminator, pass.enc.ids, pass.enc.segment_ids, grad ? &pass.enc_cache : nullptr);
      pass.probs = discriminator_logits(discriminator, pass.hidden, &pass.head_cache)
                       .unaryExpr([](T z) { return sigmoid(z); });
      const auto& range = pass.enc.marked.front();
      pass.mean_p = pass.probs.segment(static_cast<Eigen::Index>(range.begin), static_cast<Eigen::Index>(range.size())).mean();
    }

    std::vector<Vector<T>> d_logits(classes);
    const auto y = static_cast<std::size_t>(ex.label);
    if (kind == FinetuneLoss::class_nll) {
      const T floor = static_cast<T>(kScoreFloor);
      std::vector<T> s(classes);
      T sum = 0;
      for (std::size_t m = 0; m < classes; ++m) {
        s[m] = std::max(T(1) - passes[m].mean_p, floor);
        sum += s[m];
      }
      total += static_cast<double>(std::log(sum) - std::log(s[y]));
      for (std::size_t m = 0; m < classes; ++m) {
        const auto& range = passes[m].enc.marked.front();
        d_logits[m] = Vector<T>::Zero(passes[m].probs.size());
        const bool clamped = T(1) - passes[m].mean_p < floor;
        if (clamped) continue;
        const T d_s = T(1) / sum - (m == y ? T(1) / s[y] : T(0));
        const T d_mean_p = -d_s;
        for (std::size_t t = range.begin; t < range.end; ++t) {
          const T p = passes[m].probs(static_cast<Eigen::Index>(t));
          d_logits[m](static_cast<Eigen::Index>(t)) = d_mean_p * p * (T(1) - p) / static_cast<T>(range.size());
        }
      }
    } else {
      const T lo = static_cast<T>(kProbabilityClamp), hi = T(1) - lo;
      std::size_t pieces = 0;
      for (const auto& pass : passes) pieces += pass.enc.marked.front().size();
      double ex_loss = 0.0;
      for (std::size_t m = 0; m < classes; ++m) {
        const auto& range = passes[m].enc.marked.front();
        const T target = m == y ? T(0) : T(1);
        d_logits[m] = Vector<T>::Zero(passes[m].probs.size());
        for (std::size_t t = range.begin; t < range.end; ++t) {
          const T p = passes[m].probs(static_cast<Eigen::Index>(t));
          const T pc = std::clamp(p, lo, hi);
          ex_loss -= static_cast<double>(target * std::log(pc) + (T(1) - target) * std::log(T(1) - pc));
          if (p > lo && p < hi) d_logits[m](static_cast<Eigen::Index>(t)) = (p - target) / static_cast<T>(pieces);
        }
      }
      total += ex_loss / static_cast<double>(pieces);
    }

    if (grad) {
      for (std::size_t m = 0; m < classes; ++m) {
        const Vector<T> scaled = d_logits[m] * example_scale;
        const Matrix<T> d_hidden =
            discriminator_head_backward(discriminator, passes[m].hidden, passes[m].head_cache, scaled, *grad);
        encode_backward(discriminator, passes[m].enc_cache, d_hidden, *grad);
      }
    }
  }
  return total / static_cast<double>(examples.size());
}

template <typename T>
FinetuneResult<T> finetune_prompt(const Parameters<T>& discriminator, std::span<const LabeledExample> examples,
                                  const Template& tmpl, const Vocab& vocab, const FinetuneOptions& options) {
  FinetuneResult<T> result{discriminator, {}, {}};
  if (options.k_per_class <= 0 || options.epochs <= 0) return result;
  result.train_set = select_k_per_class(examples, options.k_per_class, static_cast<int>(tmpl.num_classes()), options.seed);
  if (result.train_set.empty()) return result;

  const std::size_t max_len = options.max_len;
  Parameters<T>& params = result.discriminator;
  AdamState<T> opt(params.config);
  Rng rng(options.seed + 1);
  result.epoch_losses.push_back(prompt_loss(params, std::span<const LabeledExample>(result.train_set), tmpl, vocab,
                                            options.loss, max_len));

  std::vector<std::size_t> order(result.train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto batch_size = static_cast<std::size_t>(std::max(1, options.batch_size));
  std::vector<LabeledExample> minibatch;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      minibatch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        minibatch.push_back(result.train_set[order[i]]);
      }
      Parameters<T> grad = Parameters<T>::zeros(params.config);
      prompt_loss(params, std::span<const LabeledExample>(minibatch), tmpl, vocab, options.loss, max_len, &grad);
      adam_update(params, grad, opt, options.learning_rate, options.adam);
    }
    if (!parameters_finite(params)) throw TrainingError("finetune_prompt: parameters diverged in epoch " + std::to_string(epoch));
    result.epoch_losses.push_back(prompt_loss(params, std::span<const LabeledExample>(result.train_set), tmpl, vocab,
                                              options.loss, max_len));
  }
  return result;
}

#define RTD_INSTANTIATE_PRETRAIN(T)                                                                             \
  template CorruptedBatch corrupt<T>(std::span<const int>, std::span<const int>, const MaskPlan&,               \
                                     const Parameters<T>&, int, Rng&);                                          \
  template T mlm_loss<T>(const CorruptedBatch&, const Parameters<T>&, Parameters<T>*, T);                       \
  template T disc_loss<T>(const CorruptedBatch&, const Parameters<T>&, Parameters<T>*, T);                      \
  template void adam_update<T>(Parameters<T>&, const Parameters<T>&, AdamState<T>&, double, const AdamOptions&); \
  template StepLosses train_step<T>(TrainState<T>&, std::span<const std::vector<int>>, const StepOptions&);     \
  template double detection_auc<T>(const Parameters<T>&, const Parameters<T>&, std::span<const std::vector<int>>, \
                                   const SpecialIds&, double, Rng&);                                            \
  template double prompt_loss<T>(const Parameters<T>&, std::span<const LabeledExample>, const Template&,         \
                                 const Vocab&, FinetuneLoss, std::size_t, Parameters<T>*, T);                   \
  template FinetuneResult<T> finetune_prompt<T>(const Parameters<T>&, std::span<const LabeledExample>,          \
                                                const Template&, const Vocab&, const FinetuneOptions&);

RTD_INSTANTIATE_PRETRAIN(float)
RTD_INSTANTIATE_PRETRAIN(double)

}  // namespace rtd
