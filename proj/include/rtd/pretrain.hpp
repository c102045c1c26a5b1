#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtd/model.hpp"
#include "rtd/prompt.hpp"
#include "rtd/random.hpp"
#include "rtd/tokenizer.hpp"

namespace rtd {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Masking and corruption

/// Number of positions to mask: round-half-up of rate * maskable, at least 1.
std::size_t mask_count(std::size_t maskable, double rate);

/// [CLS], [SEP], [PAD] and [MASK] are never masked.
bool is_maskable(int id, const SpecialIds& special);

struct MaskPlan {
  std::vector<int> positions;  // sorted, unique
  std::size_t k = 0;
};

MaskPlan make_mask_plan(std::span<const int> ids, const SpecialIds& special, double rate, Rng& rng);

enum class TokenLabel : std::uint8_t { original = 0, replaced = 1 };

/// One corrupted sequence: masked input for the generator, sampled
/// replacements for the discriminator, and per-token detection labels.
struct CorruptedBatch {
  std::vector<int> original;
  std::vector<int> segment_ids;
  std::vector<int> masked_positions;
  std::vector<int> x_masked;
  std::vector<int> x_corrupt;
  std::vector<TokenLabel> rtd_labels;
};

/// Replaces the planned positions with [MASK]; x_corrupt starts as a copy
/// of the original.
CorruptedBatch mask_tokens(std::span<const int> ids, std::span<const int> segment_ids, const MaskPlan& plan,
                           int mask_id);

/// Writes sampled tokens at the masked positions. A sample equal to the
/// source token is labelled original.
void apply_replacements(CorruptedBatch& batch, std::span<const int> sampled);

/// Draws one index from a probability row.
template <typename Derived>
int sample_categorical(const Eigen::MatrixBase<Derived>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += static_cast<double>(probs(i));
    if (u < acc) return static_cast<int>(i);
  }
  for (Eigen::Index i = probs.size(); i-- > 0;) {
    if (probs(i) > 0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

/// Masks, samples replacements from the generator, and labels the result.
template <typename T>
CorruptedBatch corrupt(std::span<const int> ids, std::span<const int> segment_ids, const MaskPlan& plan,
                       const Parameters<T>& generator, int mask_id, Rng& rng);

// ---------------------------------------------------------------------------
// Losses

/// Probabilities are clamped to [eps, 1 - eps] inside the detection loss.
inline constexpr double kProbabilityClamp = 1e-7;

/// Mean over masked positions of -log P_G(original | x_masked). When `grad`
/// is given, grad_scale * d(loss) is accumulated into it.
template <typename T>
T mlm_loss(const CorruptedBatch& batch, const Parameters<T>& generator, Parameters<T>* grad = nullptr,
           T grad_scale = T(1));

/// Mean over non-pad positions of the binary cross-entropy between
/// P(replaced) and rtd_labels.
template <typename T>
T disc_loss(const CorruptedBatch& batch, const Parameters<T>& discriminator, Parameters<T>* grad = nullptr,
            T grad_scale = T(1));

/// Mean clamped binary cross-entropy of P(replaced) against labels.
double detection_cross_entropy(std::span<const double> p_replaced, std::span<const TokenLabel> labels);

// ---------------------------------------------------------------------------
// Optimization

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

template <typename T>
struct AdamState {
  Parameters<T> first;
  Parameters<T> second;
  long steps = 0;

  explicit AdamState(const ModelConfig& config)
      : first(Parameters<T>::zeros(config)), second(Parameters<T>::zeros(config)) {}
};

template <typename T>
void adam_update(Parameters<T>& params, const Parameters<T>& grad, AdamState<T>& state, double learning_rate,
                 const AdamOptions& options = {});

/// Linear warmup over the first `warmup_fraction` of steps, then constant.
double scheduled_learning_rate(double base, long step, long total_steps, double warmup_fraction);

template <typename T>
struct TrainState {
  Parameters<T> generator;
  Parameters<T> discriminator;
  AdamState<T> generator_opt;
  AdamState<T> discriminator_opt;
  long step = 0;
  std::uint64_t seed = 0;
  Rng rng;

  TrainState(Parameters<T> gen, Parameters<T> disc, std::uint64_t seed_value)
      : generator(std::move(gen)),
        discriminator(std::move(disc)),
        generator_opt(generator.config),
        discriminator_opt(discriminator.config),
        seed(seed_value),
        rng(seed_value) {}
};

struct StepOptions {
  double learning_rate = 5e-4;
  double disc_weight = 50.0;  // lambda on the detection loss
  double mask_rate = 0.15;
  SpecialIds special;
  AdamOptions adam;
};

struct StepLosses {
  double mlm = 0.0;
  double disc = 0.0;
};

/// One optimizer step on L_MLM(theta_G) + disc_weight * L_Disc(theta_D),
/// both averaged over the batch. Sampling cuts the gradient path from the
/// discriminator into the generator.
template <typename T>
StepLosses train_step(TrainState<T>& state, std::span<const std::vector<int>> batch, const StepOptions& options);

// ---------------------------------------------------------------------------
// Toy corpus and pre-training driver

/// [PAD] [UNK] [CLS] [SEP] [MASK] followed by w0, w1, ...
Vocab toy_vocab(int vocab_size);

inline constexpr int kToySpecialCount = 5;

/// First-order Markov chain over the non-special ids of a toy vocabulary.
/// Every token has a handful of successors with skewed probabilities.
class MarkovCorpus {
 public:
  MarkovCorpus(int vocab_size, int successors, std::uint64_t seed);

  /// [CLS] t_1 ... t_{length-2} [SEP]
  std::vector<int> sample(int length, Rng& rng) const;
  int vocab_size() const { return vocab_size_; }
  double transition(int from, int to) const;

 private:
  int vocab_size_;
  std::vector<std::vector<std::pair<int, double>>> next_;  // indexed by id - kToySpecialCount
};

struct TrainConfig {
  std::uint64_t seed = 1;
  long steps = 2000;
  int batch_size = 16;
  double learning_rate = 5e-4;
  double warmup_fraction = 0.1;
  double mask_rate = 0.15;
  double disc_weight = 50.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-6;

  int vocab_size = 30;
  int sequence_length = 24;
  int successors = 3;

  int layers = 2;
  int hidden = 32;
  int heads = 2;
  int intermediate = 64;
  int embedding_size = 0;       // 0: same as hidden
  int generator_hidden = 0;     // 0: hidden / 2
  int generator_heads = 0;      // 0: heads
  int generator_intermediate = 0;  // 0: intermediate / 2
  int max_positions = 64;
  double init_stddev = 0.1;  // normal init for every weight matrix
};

/// Key=value lines; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
std::string format_train_config(const TrainConfig& config);
/// Applies one key=value setting.
void set_train_option(TrainConfig& config, std::string_view key, std::string_view value);

ModelConfig discriminator_config(const TrainConfig& config);
ModelConfig generator_config(const TrainConfig& config);

struct LossRecord {
  long step = 0;
  double mlm = 0.0;
  double disc = 0.0;
};

struct PretrainResult {
  TrainState<float> state;
  std::vector<LossRecord> history;
};

PretrainResult run_pretraining(const TrainConfig& config,
                               const std::function<void(const LossRecord&)>& on_step = {});

/// CSV header `step,L_MLM,L_Disc`.
void write_loss_csv(std::ostream& out, std::span<const LossRecord> history);

/// Mean disc loss over `window` records starting at `begin`.
double mean_disc_loss(std::span<const LossRecord> history, std::size_t begin, std::size_t window);

/// ROC AUC of P(replaced) against replaced labels on freshly corrupted
/// sequences; special positions are excluded.
template <typename T>
double detection_auc(const Parameters<T>& generator, const Parameters<T>& discriminator,
                     std::span<const std::vector<int>> sequences, const SpecialIds& special, double mask_rate,
                     Rng& rng);

// ---------------------------------------------------------------------------
// Prompt-based few-shot fine-tuning

enum class FinetuneLoss {
  class_nll,          // -log of the normalized class probability
  label_word_binary,  // per-piece detection loss: true label word original, others replaced
};

struct LabeledExample {
  Fields fields;
  int label = 0;  // class index into the template's label words
};

struct FinetuneOptions {
  int k_per_class = 16;
  int epochs = 10;
  double learning_rate = 1e-4;
  int batch_size = 8;
  std::uint64_t seed = 0;
  FinetuneLoss loss = FinetuneLoss::class_nll;
  std::size_t max_len = 0;  // 0: model max_positions
  AdamOptions adam;
};

/// The first K examples of each class after a seeded shuffle.
std::vector<LabeledExample> select_k_per_class(std::span<const LabeledExample> examples, int k, int num_classes,
                                               std::uint64_t seed);

/// Mean prompt loss over `examples`; accumulates grad_scale * gradient.
template <typename T>
double prompt_loss(const Parameters<T>& discriminator, std::span<const LabeledExample> examples,
                   const Template& tmpl, const Vocab& vocab, FinetuneLoss kind, std::size_t max_len,
                   Parameters<T>* grad = nullptr, T grad_scale = T(1));

template <typename T>
struct FinetuneResult {
  Parameters<T> discriminator;
  std::vector<LabeledExample> train_set;
  std::vector<double> epoch_losses;  // training-set loss after each epoch; [0] is before training
};

/// Updates every discriminator parameter; the generator is not involved.
template <typename T>
FinetuneResult<T> finetune_prompt(const Parameters<T>& discriminator, std::span<const LabeledExample> examples,
                                  const Template& tmpl, const Vocab& vocab, const FinetuneOptions& options);

}  // namespace rtd
