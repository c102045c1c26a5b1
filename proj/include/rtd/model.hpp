#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rtd/random.hpp"
#include "rtd/tensor.hpp"

namespace rtd {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HeadRole { discriminator, generator };

std::string_view head_role_name(HeadRole role);
HeadRole parse_head_role(std::string_view name);

struct ModelConfig {
  int num_layers = 2;
  int hidden = 16;
  int heads = 2;
  int intermediate = 32;
  int vocab_size = 50;
  int max_positions = 64;
  int embedding_size = 16;
  int type_vocab_size = 2;
  HeadRole head_role = HeadRole::discriminator;
  double layer_norm_eps = 1e-12;
  int pad_token_id = 0;

  /// Throws ModelError naming the first violated constraint.
  void validate() const;
  bool projects_embeddings() const { return embedding_size != hidden; }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct EncoderLayer {
  Matrix<T> query_w, key_w, value_w, attn_out_w;
  RowVector<T> query_b, key_b, value_b, attn_out_b;
  RowVector<T> attn_ln_g, attn_ln_b;
  Matrix<T> inter_w, out_w;
  RowVector<T> inter_b, out_b;
  RowVector<T> out_ln_g, out_ln_b;
};

/// Full parameter set of one encoder plus its role-specific head. The same
/// type doubles as the gradient and optimizer-moment container.
template <typename T>
struct Parameters {
  ModelConfig config;

  Matrix<T> word_emb, pos_emb, type_emb;
  RowVector<T> emb_ln_g, emb_ln_b;
  Matrix<T> proj_w;  // [hidden, embedding]; empty unless the sizes differ
  RowVector<T> proj_b;
  std::vector<EncoderLayer<T>> layers;

  // discriminator head: dense -> gelu -> scalar
  Matrix<T> disc_dense_w;
  RowVector<T> disc_dense_b;
  Matrix<T> disc_out_w;  // [1, hidden]
  RowVector<T> disc_out_b;

  // generator head: dense -> gelu -> layer norm -> tied embeddings + bias
  Matrix<T> gen_dense_w;  // [embedding, hidden]
  RowVector<T> gen_dense_b, gen_ln_g, gen_ln_b;
  RowVector<T> gen_vocab_b;

  /// Correctly shaped zeros, layer-norm gains included.
  static Parameters zeros(const ModelConfig& config);
};

/// Truncated-free normal init (stddev 0.02 by default), unit layer-norm gains.
template <typename T>
Parameters<T> random_parameters(const ModelConfig& config, Rng& rng, double stddev = 0.02);

/// Visits every tensor of the config's layout in manifest order. `f` gets the
/// tensor name followed by the matching member of each argument, so several
/// parameter sets (values, gradients, moments) can be walked in lockstep.
template <typename F, typename First, typename... Rest>
void for_each_param(F&& f, First& first, Rest&... rest) {
  auto visit = [&](const std::string& name, auto get) { f(name, get(first), get(rest)...); };
#define RTD_VISIT(name, expr) visit(name, [&](auto& p) -> auto& { return p.expr; })
  const ModelConfig& cfg = first.config;
  RTD_VISIT("embeddings.word_embeddings.weight", word_emb);
  RTD_VISIT("embeddings.position_embeddings.weight", pos_emb);
  RTD_VISIT("embeddings.token_type_embeddings.weight", type_emb);
  RTD_VISIT("embeddings.LayerNorm.weight", emb_ln_g);
  RTD_VISIT("embeddings.LayerNorm.bias", emb_ln_b);
  if (cfg.projects_embeddings()) {
    RTD_VISIT("embeddings_project.weight", proj_w);
    RTD_VISIT("embeddings_project.bias", proj_b);
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.num_layers); ++i) {
    const std::string p = "encoder.layer." + std::to_string(i) + ".";
    RTD_VISIT(p + "attention.self.query.weight", layers[i].query_w);
    RTD_VISIT(p + "attention.self.query.bias", layers[i].query_b);
    RTD_VISIT(p + "attention.self.key.weight", layers[i].key_w);
    RTD_VISIT(p + "attention.self.key.bias", layers[i].key_b);
    RTD_VISIT(p + "attention.self.value.weight", layers[i].value_w);
    RTD_VISIT(p + "attention.self.value.bias", layers[i].value_b);
    RTD_VISIT(p + "attention.output.dense.weight", layers[i].attn_out_w);
    RTD_VISIT(p + "attention.output.dense.bias", layers[i].attn_out_b);
    RTD_VISIT(p + "attention.output.LayerNorm.weight", layers[i].attn_ln_g);
    RTD_VISIT(p + "attention.output.LayerNorm.bias", layers[i].attn_ln_b);
    RTD_VISIT(p + "intermediate.dense.weight", layers[i].inter_w);
    RTD_VISIT(p + "intermediate.dense.bias", layers[i].inter_b);
    RTD_VISIT(p + "output.dense.weight", layers[i].out_w);
    RTD_VISIT(p + "output.dense.bias", layers[i].out_b);
    RTD_VISIT(p + "output.LayerNorm.weight", layers[i].out_ln_g);
    RTD_VISIT(p + "output.LayerNorm.bias", layers[i].out_ln_b);
  }
  if (cfg.head_role == HeadRole::discriminator) {
    RTD_VISIT("discriminator_predictions.dense.weight", disc_dense_w);
    RTD_VISIT("discriminator_predictions.dense.bias", disc_dense_b);
    RTD_VISIT("discriminator_predictions.dense_prediction.weight", disc_out_w);
    RTD_VISIT("discriminator_predictions.dense_prediction.bias", disc_out_b);
  } else {
    RTD_VISIT("generator_predictions.dense.weight", gen_dense_w);
    RTD_VISIT("generator_predictions.dense.bias", gen_dense_b);
    RTD_VISIT("generator_predictions.LayerNorm.weight", gen_ln_g);
    RTD_VISIT("generator_predictions.LayerNorm.bias", gen_ln_b);
    RTD_VISIT("generator_lm_head.bias", gen_vocab_b);
  }
#undef RTD_VISIT
}

template <typename To, typename From>
Parameters<To> cast_parameters(const Parameters<From>& from) {
  Parameters<To> to = Parameters<To>::zeros(from.config);
  for_each_param([](const std::string&, const auto& src, auto& dst) { dst = src.template cast<To>(); }, from, to);
  return to;
}

template <typename T>
std::size_t parameter_count(const Parameters<T>& params) {
  std::size_t n = 0;
  for_each_param([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); }, params);
  return n;
}

template <typename T>
Vector<T> flatten(const Parameters<T>& params) {
  Vector<T> flat(static_cast<Eigen::Index>(parameter_count(params)));
  Eigen::Index at = 0;
  for_each_param(
      [&](const std::string&, const auto& t) {
        flat.segment(at, t.size()) = Eigen::Map<const Vector<T>>(t.data(), t.size());
        at += t.size();
      },
      params);
  return flat;
}

template <typename T>
void unflatten(const Vector<T>& flat, Parameters<T>& params) {
  Eigen::Index at = 0;
  for_each_param(
      [&](const std::string&, auto& t) {
        Eigen::Map<Vector<T>>(t.data(), t.size()) = flat.segment(at, t.size());
        at += t.size();
      },
      params);
}

template <typename T>
bool parameters_finite(const Parameters<T>& params) {
  bool ok = true;
  for_each_param([&](const std::string&, const auto& t) { ok = ok && all_finite(t); }, params);
  return ok;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
struct LayerCache {
  Matrix<T> input, query, key, value;
  std::vector<Matrix<T>> attention;  // per head, [n, n]
  Matrix<T> context;
  LayerNormCache<T> attn_ln;
  Matrix<T> attn_norm;
  Matrix<T> inter_pre, inter_act;
  LayerNormCache<T> out_ln;
};

template <typename T>
struct EncoderCache {
  std::vector<int> ids, segment_ids;
  std::vector<bool> attendable;
  LayerNormCache<T> emb_ln;
  Matrix<T> embedded;  // after the embedding layer norm
  std::vector<LayerCache<T>> layers;
};

/// Contextual hidden states [n, hidden]. Keys holding the pad id are masked
/// out of attention.
template <typename T>
Matrix<T> encode(const Parameters<T>& params, std::span<const int> ids, std::span<const int> segment_ids,
                 EncoderCache<T>* cache = nullptr);

/// Accumulates parameter gradients for d(loss)/d(hidden).
template <typename T>
void encode_backward(const Parameters<T>& params, const EncoderCache<T>& cache, const Matrix<T>& d_hidden,
                     Parameters<T>& grad);

template <typename T>
struct DiscriminatorHeadCache {
  Matrix<T> dense_pre;
  Matrix<T> dense_act;
};

/// Per-token replaced logits.
template <typename T>
Vector<T> discriminator_logits(const Parameters<T>& params, const Matrix<T>& hidden,
                               DiscriminatorHeadCache<T>* cache = nullptr);

template <typename T>
Matrix<T> discriminator_head_backward(const Parameters<T>& params, const Matrix<T>& hidden,
                                      const DiscriminatorHeadCache<T>& cache, const Vector<T>& d_logits,
                                      Parameters<T>& grad);

template <typename T>
struct GeneratorHeadCache {
  std::vector<int> positions;
  Matrix<T> gathered, dense_pre, dense_act, normed;
  LayerNormCache<T> ln;
};

/// Vocabulary logits [positions, vocab] using the tied word embeddings.
template <typename T>
Matrix<T> generator_logits(const Parameters<T>& params, const Matrix<T>& hidden, std::span<const int> positions,
                           GeneratorHeadCache<T>* cache = nullptr);

/// Returns d(loss)/d(hidden) with rows scattered back to sequence positions.
template <typename T>
Matrix<T> generator_head_backward(const Parameters<T>& params, const GeneratorHeadCache<T>& cache,
                                  const Matrix<T>& d_logits, Eigen::Index sequence_length, Parameters<T>& grad);

struct DiscriminatorOutput {
  std::vector<double> p_replaced;
};

template <typename T>
DiscriminatorOutput discriminator_forward(std::span<const int> ids, std::span<const int> segment_ids,
                                          const Parameters<T>& params);

/// Softmax distributions [positions, vocab] at the requested positions.
template <typename T>
Matrix<T> generator_forward(std::span<const int> ids, std::span<const int> segment_ids,
                            const Parameters<T>& params, std::span<const int> masked_positions);

#define RTD_DECLARE_MODEL(T)                                                                                \
  extern template struct Parameters<T>;                                                                     \
  extern template Parameters<T> random_parameters<T>(const ModelConfig&, Rng&, double);                     \
  extern template Matrix<T> encode<T>(const Parameters<T>&, std::span<const int>, std::span<const int>,     \
                                      EncoderCache<T>*);                                                    \
  extern template void encode_backward<T>(const Parameters<T>&, const EncoderCache<T>&, const Matrix<T>&,   \
                                          Parameters<T>&);                                                  \
  extern template Vector<T> discriminator_logits<T>(const Parameters<T>&, const Matrix<T>&,                 \
                                                    DiscriminatorHeadCache<T>*);                            \
  extern template Matrix<T> discriminator_head_backward<T>(const Parameters<T>&, const Matrix<T>&,          \
                                                           const DiscriminatorHeadCache<T>&,                \
                                                           const Vector<T>&, Parameters<T>&);               \
  extern template Matrix<T> generator_logits<T>(const Parameters<T>&, const Matrix<T>&, std::span<const int>, \
                                                GeneratorHeadCache<T>*);                                    \
  extern template Matrix<T> generator_head_backward<T>(const Parameters<T>&, const GeneratorHeadCache<T>&,  \
                                                       const Matrix<T>&, Eigen::Index, Parameters<T>&);     \
  extern template DiscriminatorOutput discriminator_forward<T>(std::span<const int>, std::span<const int>,  \
                                                               const Parameters<T>&);                       \
  extern template Matrix<T> generator_forward<T>(std::span<const int>, std::span<const int>,                \
                                                 const Parameters<T>&, std::span<const int>);

RTD_DECLARE_MODEL(float)
RTD_DECLARE_MODEL(double)
#undef RTD_DECLARE_MODEL

}  // namespace rtd
