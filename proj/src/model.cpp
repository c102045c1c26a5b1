#include "rtd/model.hpp"

#include <cmath>

namespace rtd {

std::string_view head_role_name(HeadRole role) {
  return role == HeadRole::discriminator ? "discriminator" : "generator";
}

HeadRole parse_head_role(std::string_view name) {
  if (name == "discriminator") return HeadRole::discriminator;
  if (name == "generator") return HeadRole::generator;
  throw ModelError("unknown head role '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ModelError(std::string("model config: ") + what + " must be >= 1, got " + std::to_string(v));
  };
  positive(num_layers, "num_layers");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(intermediate, "intermediate");
  positive(vocab_size, "vocab_size");
  positive(max_positions, "max_positions");
  positive(embedding_size, "embedding_size");
  positive(type_vocab_size, "type_vocab_size");
  if (hidden % heads != 0) {
    throw ModelError("model config: hidden " + std::to_string(hidden) + " is not divisible by heads " +
                     std::to_string(heads));
  }
  if (!(layer_norm_eps > 0.0)) throw ModelError("model config: layer_norm_eps must be positive");
  if (pad_token_id < 0 || pad_token_id >= vocab_size) {
    throw ModelError("model config: pad_token_id " + std::to_string(pad_token_id) + " outside vocabulary");
  }
}

template <typename T>
Parameters<T> Parameters<T>::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index H = cfg.hidden, E = cfg.embedding_size, I = cfg.intermediate, V = cfg.vocab_size;
  Parameters p;
  p.config = cfg;
  p.word_emb = Matrix<T>::Zero(V, E);
  p.pos_emb = Matrix<T>::Zero(cfg.max_positions, E);
  p.type_emb = Matrix<T>::Zero(cfg.type_vocab_size, E);
  p.emb_ln_g = RowVector<T>::Zero(E);
  p.emb_ln_b = RowVector<T>::Zero(E);
  if (cfg.projects_embeddings()) {
    p.proj_w = Matrix<T>::Zero(H, E);
    p.proj_b = RowVector<T>::Zero(H);
  }
  p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& layer : p.layers) {
    for (auto* w : {&layer.query_w, &layer.key_w, &layer.value_w, &layer.attn_out_w}) *w = Matrix<T>::Zero(H, H);
    for (auto* b : {&layer.query_b, &layer.key_b, &layer.value_b, &layer.attn_out_b, &layer.attn_ln_g,
                    &layer.attn_ln_b, &layer.out_b, &layer.out_ln_g, &layer.out_ln_b}) {
      *b = RowVector<T>::Zero(H);
    }
    layer.inter_w = Matrix<T>::Zero(I, H);
    layer.inter_b = RowVector<T>::Zero(I);
    layer.out_w = Matrix<T>::Zero(H, I);
  }
  if (cfg.head_role == HeadRole::discriminator) {
    p.disc_dense_w = Matrix<T>::Zero(H, H);
    p.disc_dense_b = RowVector<T>::Zero(H);
    p.disc_out_w = Matrix<T>::Zero(1, H);
    p.disc_out_b = RowVector<T>::Zero(1);
  } else {
    p.gen_dense_w = Matrix<T>::Zero(E, H);
    p.gen_dense_b = RowVector<T>::Zero(E);
    p.gen_ln_g = RowVector<T>::Zero(E);
    p.gen_ln_b = RowVector<T>::Zero(E);
    p.gen_vocab_b = RowVector<T>::Zero(V);
  }
  return p;
}

template <typename T>
Parameters<T> random_parameters(const ModelConfig& config, Rng& rng, double stddev) {
  Parameters<T> p = Parameters<T>::zeros(config);
  for_each_param(
      [&](const std::string& name, auto& t) {
        if (name.ends_with("LayerNorm.weight")) {
          t.setOnes();
        } else if (name.ends_with(".weight")) {
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(stddev * rng.normal());
        }
      },
      p);
  return p;
}

namespace {

void check_inputs(const ModelConfig& cfg, std::span<const int> ids, std::span<const int> segment_ids) {
  if (ids.empty()) throw ModelError("forward: empty input sequence");
  if (ids.size() != segment_ids.size()) {
    throw ModelError("forward: " + std::to_string(ids.size()) + " ids but " + std::to_string(segment_ids.size()) +
                     " segment ids");
  }
  if (ids.size() > static_cast<std::size_t>(cfg.max_positions)) {
    throw ModelError("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_positions " +
                     std::to_string(cfg.max_positions));
  }
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= cfg.vocab_size) {
      throw ModelError("forward: token id " + std::to_string(ids[t]) + " at position " + std::to_string(t) +
                       " outside vocabulary of " + std::to_string(cfg.vocab_size));
    }
    if (segment_ids[t] < 0 || segment_ids[t] >= cfg.type_vocab_size) {
      throw ModelError("forward: segment id " + std::to_string(segment_ids[t]) + " at position " +
                       std::to_string(t) + " out of range");
    }
  }
}

// Row softmax restricted to attendable columns; masked entries are exactly 0.
template <typename T>
Matrix<T> masked_softmax(const Matrix<T>& scores, const std::vector<bool>& attendable) {
  Matrix<T> out = Matrix<T>::Zero(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    T peak = -std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (attendable[static_cast<std::size_t>(c)]) peak = std::max(peak, scores(r, c));
    }
    T total = 0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (!attendable[static_cast<std::size_t>(c)]) continue;
      out(r, c) = std::exp(scores(r, c) - peak);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

template <typename T>
Matrix<T> layer_forward(const EncoderLayer<T>& w, const ModelConfig& cfg, const Matrix<T>& input,
                        const std::vector<bool>& attendable, LayerCache<T>& c) {
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  const Eigen::Index head_dim = cfg.hidden / cfg.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  c.input = input;
  c.query = linear(input, w.query_w, w.query_b);
  c.key = linear(input, w.key_w, w.key_b);
  c.value = linear(input, w.value_w, w.value_b);
  c.context.resize(input.rows(), cfg.hidden);
  c.attention.resize(static_cast<std::size_t>(cfg.heads));
  for (Eigen::Index h = 0; h < cfg.heads; ++h) {
    const Eigen::Index col = h * head_dim;
    Matrix<T> scores = c.query.middleCols(col, head_dim) * c.key.middleCols(col, head_dim).transpose();
    scores *= scale;
    auto& probs = c.attention[static_cast<std::size_t>(h)];
    probs = masked_softmax(scores, attendable);
    c.context.middleCols(col, head_dim).noalias() = probs * c.value.middleCols(col, head_dim);
  }
  Matrix<T> attn = linear(c.context, w.attn_out_w, w.attn_out_b);
  attn += input;
  c.attn_norm = layer_norm(attn, w.attn_ln_g, w.attn_ln_b, eps, &c.attn_ln);
  c.inter_pre = linear(c.attn_norm, w.inter_w, w.inter_b);
  c.inter_act = elementwise(Activation::gelu, c.inter_pre);
  Matrix<T> out = linear(c.inter_act, w.out_w, w.out_b);
  out += c.attn_norm;
  return layer_norm(out, w.out_ln_g, w.out_ln_b, eps, &c.out_ln);
}

template <typename T>
Matrix<T> layer_backward(const EncoderLayer<T>& w, const ModelConfig& cfg, const LayerCache<T>& c,
                         const Matrix<T>& d_out, EncoderLayer<T>& g) {
  const Eigen::Index head_dim = cfg.hidden / cfg.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));

  const Matrix<T> d_sum2 = layer_norm_backward(d_out, c.out_ln, w.out_ln_g, g.out_ln_g, g.out_ln_b);
  const Matrix<T> d_inter_act = linear_backward(c.inter_act, w.out_w, d_sum2, g.out_w, g.out_b);
  const Matrix<T> d_inter_pre = elementwise_backward(Activation::gelu, c.inter_pre, d_inter_act);
  Matrix<T> d_attn_norm = d_sum2 + linear_backward(c.attn_norm, w.inter_w, d_inter_pre, g.inter_w, g.inter_b);
  const Matrix<T> d_sum1 = layer_norm_backward(d_attn_norm, c.attn_ln, w.attn_ln_g, g.attn_ln_g, g.attn_ln_b);
  const Matrix<T> d_context = linear_backward(c.context, w.attn_out_w, d_sum1, g.attn_out_w, g.attn_out_b);

  Matrix<T> d_query(c.query.rows(), c.query.cols());
  Matrix<T> d_key(c.key.rows(), c.key.cols());
  Matrix<T> d_value(c.value.rows(), c.value.cols());
  for (Eigen::Index h = 0; h < cfg.heads; ++h) {
    const Eigen::Index col = h * head_dim;
    const auto& probs = c.attention[static_cast<std::size_t>(h)];
    const Matrix<T> d_ctx = d_context.middleCols(col, head_dim);
    const Matrix<T> d_probs = d_ctx * c.value.middleCols(col, head_dim).transpose();
    d_value.middleCols(col, head_dim).noalias() = probs.transpose() * d_ctx;
    const Vector<T> row_dot = d_probs.cwiseProduct(probs).rowwise().sum();
    Matrix<T> d_scores = probs.cwiseProduct((d_probs.colwise() - row_dot));
    d_scores *= scale;
    d_query.middleCols(col, head_dim).noalias() = d_scores * c.key.middleCols(col, head_dim);
    d_key.middleCols(col, head_dim).noalias() = d_scores.transpose() * c.query.middleCols(col, head_dim);
  }
  Matrix<T> d_input = d_sum1;
  d_input += linear_backward(c.input, w.query_w, d_query, g.query_w, g.query_b);
  d_input += linear_backward(c.input, w.key_w, d_key, g.key_w, g.key_b);
  d_input += linear_backward(c.input, w.value_w, d_value, g.value_w, g.value_b);
  return d_input;
}

}  // namespace

template <typename T>
Matrix<T> encode(const Parameters<T>& params, std::span<const int> ids, std::span<const int> segment_ids,
                 EncoderCache<T>* cache) {
  const ModelConfig& cfg = params.config;
  check_inputs(cfg, ids, segment_ids);
  const auto n = static_cast<Eigen::Index>(ids.size());

  EncoderCache<T> local;
  EncoderCache<T>& c = cache ? *cache : local;
  c.ids.assign(ids.begin(), ids.end());
  c.segment_ids.assign(segment_ids.begin(), segment_ids.end());
  c.attendable.assign(ids.size(), false);
  bool any = false;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    c.attendable[t] = ids[t] != cfg.pad_token_id;
    any = any || c.attendable[t];
  }
  if (!any) c.attendable.assign(ids.size(), true);

  Matrix<T> summed(n, cfg.embedding_size);
  for (Eigen::Index t = 0; t < n; ++t) {
    summed.row(t) = params.word_emb.row(ids[static_cast<std::size_t>(t)]) + params.pos_emb.row(t) +
                    params.type_emb.row(segment_ids[static_cast<std::size_t>(t)]);
  }
  c.embedded = layer_norm(summed, params.emb_ln_g, params.emb_ln_b, static_cast<T>(cfg.layer_norm_eps), &c.emb_ln);
  Matrix<T> hidden = cfg.projects_embeddings() ? linear(c.embedded, params.proj_w, params.proj_b) : c.embedded;

  c.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    hidden = layer_forward(params.layers[i], cfg, hidden, c.attendable, c.layers[i]);
  }
  return hidden;
}

template <typename T>
void encode_backward(const Parameters<T>& params, const EncoderCache<T>& cache, const Matrix<T>& d_hidden,
                     Parameters<T>& grad) {
  const ModelConfig& cfg = params.config;
  Matrix<T> d = d_hidden;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    d = layer_backward(params.layers[i], cfg, cache.layers[i], d, grad.layers[i]);
  }
  Matrix<T> d_embedded =
      cfg.projects_embeddings() ? linear_backward(cache.embedded, params.proj_w, d, grad.proj_w, grad.proj_b) : d;
  const Matrix<T> d_summed = layer_norm_backward(d_embedded, cache.emb_ln, params.emb_ln_g, grad.emb_ln_g,
                                                 grad.emb_ln_b);
  for (Eigen::Index t = 0; t < d_summed.rows(); ++t) {
    grad.word_emb.row(cache.ids[static_cast<std::size_t>(t)]) += d_summed.row(t);
    grad.pos_emb.row(t) += d_summed.row(t);
    grad.type_emb.row(cache.segment_ids[static_cast<std::size_t>(t)]) += d_summed.row(t);
  }
}

template <typename T>
Vector<T> discriminator_logits(const Parameters<T>& params, const Matrix<T>& hidden,
                               DiscriminatorHeadCache<T>* cache) {
  if (params.config.head_role != HeadRole::discriminator) throw ModelError("parameters carry no discriminator head");
  DiscriminatorHeadCache<T> local;
  DiscriminatorHeadCache<T>& c = cache ? *cache : local;
  c.dense_pre = linear(hidden, params.disc_dense_w, params.disc_dense_b);
  c.dense_act = elementwise(Activation::gelu, c.dense_pre);
  const Matrix<T> logits = linear(c.dense_act, params.disc_out_w, params.disc_out_b);
  return logits.col(0);
}

template <typename T>
Matrix<T> discriminator_head_backward(const Parameters<T>& params, const Matrix<T>& hidden,
                                      const DiscriminatorHeadCache<T>& cache, const Vector<T>& d_logits,
                                      Parameters<T>& grad) {
  const Matrix<T> d_out = d_logits;
  const Matrix<T> d_act = linear_backward(cache.dense_act, params.disc_out_w, d_out, grad.disc_out_w, grad.disc_out_b);
  const Matrix<T> d_pre = elementwise_backward(Activation::gelu, cache.dense_pre, d_act);
  return linear_backward(hidden, params.disc_dense_w, d_pre, grad.disc_dense_w, grad.disc_dense_b);
}

template <typename T>
Matrix<T> generator_logits(const Parameters<T>& params, const Matrix<T>& hidden, std::span<const int> positions,
                           GeneratorHeadCache<T>* cache) {
  if (params.config.head_role != HeadRole::generator) throw ModelError("parameters carry no generator head");
  GeneratorHeadCache<T> local;
  GeneratorHeadCache<T>& c = cache ? *cache : local;
  c.positions.assign(positions.begin(), positions.end());
  c.gathered.resize(static_cast<Eigen::Index>(positions.size()), hidden.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= hidden.rows()) {
      throw ModelError("generator: position " + std::to_string(positions[i]) + " outside sequence of length " +
                       std::to_string(hidden.rows()));
    }
    c.gathered.row(static_cast<Eigen::Index>(i)) = hidden.row(positions[i]);
  }
  c.dense_pre = linear(c.gathered, params.gen_dense_w, params.gen_dense_b);
  c.dense_act = elementwise(Activation::gelu, c.dense_pre);
  c.normed = layer_norm(c.dense_act, params.gen_ln_g, params.gen_ln_b, static_cast<T>(params.config.layer_norm_eps),
                        &c.ln);
  Matrix<T> logits = c.normed * params.word_emb.transpose();
  logits.rowwise() += params.gen_vocab_b;
  return logits;
}

template <typename T>
Matrix<T> generator_head_backward(const Parameters<T>& params, const GeneratorHeadCache<T>& cache,
                                  const Matrix<T>& d_logits, Eigen::Index sequence_length, Parameters<T>& grad) {
  grad.word_emb.noalias() += d_logits.transpose() * cache.normed;
  grad.gen_vocab_b += d_logits.colwise().sum();
  const Matrix<T> d_normed = d_logits * params.word_emb;
  const Matrix<T> d_act = layer_norm_backward(d_normed, cache.ln, params.gen_ln_g, grad.gen_ln_g, grad.gen_ln_b);
  const Matrix<T> d_pre = elementwise_backward(Activation::gelu, cache.dense_pre, d_act);
  const Matrix<T> d_gathered =
      linear_backward(cache.gathered, params.gen_dense_w, d_pre, grad.gen_dense_w, grad.gen_dense_b);
  Matrix<T> d_hidden = Matrix<T>::Zero(sequence_length, d_gathered.cols());
  for (std::size_t i = 0; i < cache.positions.size(); ++i) {
    d_hidden.row(cache.positions[i]) += d_gathered.row(static_cast<Eigen::Index>(i));
  }
  return d_hidden;
}

template <typename T>
DiscriminatorOutput discriminator_forward(std::span<const int> ids, std::span<const int> segment_ids,
                                          const Parameters<T>& params) {
  const Vector<T> logits = discriminator_logits(params, encode(params, ids, segment_ids));
  DiscriminatorOutput out;
  out.p_replaced.resize(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index t = 0; t < logits.size(); ++t) {
    out.p_replaced[static_cast<std::size_t>(t)] = static_cast<double>(sigmoid(logits(t)));
  }
  return out;
}

template <typename T>
Matrix<T> generator_forward(std::span<const int> ids, std::span<const int> segment_ids, const Parameters<T>& params,
                            std::span<const int> masked_positions) {
  for (int pos : masked_positions) {
    if (pos < 0 || static_cast<std::size_t>(pos) >= ids.size()) {
      throw ModelError("generator: masked position " + std::to_string(pos) + " outside sequence of length " +
                       std::to_string(ids.size()));
    }
  }
  const Matrix<T> hidden = encode(params, ids, segment_ids);
  return row_softmax(generator_logits(params, hidden, masked_positions));
}

#define RTD_INSTANTIATE_MODEL(T)                                                                             \
  template struct Parameters<T>;                                                                             \
  template Parameters<T> random_parameters<T>(const ModelConfig&, Rng&, double);                             \
  template Matrix<T> encode<T>(const Parameters<T>&, std::span<const int>, std::span<const int>,             \
                               EncoderCache<T>*);                                                            \
  template void encode_backward<T>(const Parameters<T>&, const EncoderCache<T>&, const Matrix<T>&,           \
                                   Parameters<T>&);                                                          \
  template Vector<T> discriminator_logits<T>(const Parameters<T>&, const Matrix<T>&,                         \
                                             DiscriminatorHeadCache<T>*);                                    \
  template Matrix<T> discriminator_head_backward<T>(const Parameters<T>&, const Matrix<T>&,                  \
                                                    const DiscriminatorHeadCache<T>&, const Vector<T>&,      \
                                                    Parameters<T>&);                                         \
  template Matrix<T> generator_logits<T>(const Parameters<T>&, const Matrix<T>&, std::span<const int>,       \
                                         GeneratorHeadCache<T>*);                                            \
  template Matrix<T> generator_head_backward<T>(const Parameters<T>&, const GeneratorHeadCache<T>&,          \
                                                const Matrix<T>&, Eigen::Index, Parameters<T>&);             \
  template DiscriminatorOutput discriminator_forward<T>(std::span<const int>, std::span<const int>,          \
                                                        const Parameters<T>&);                               \
  template Matrix<T> generator_forward<T>(std::span<const int>, std::span<const int>, const Parameters<T>&,  \
                                          std::span<const int>);

RTD_INSTANTIATE_MODEL(float)
RTD_INSTANTIATE_MODEL(double)

}  // namespace rtd
