#include "cda/encoder.hpp"

#include <cmath>

#include "cda/error.hpp"

namespace cda {

void EncoderConfig::validate() const {
  if (d == 0 || n_heads == 0 || d_ff == 0 || n_layers == 0) throw ConfigError("encoder dimensions must be positive");
  if (d % n_heads != 0) {
    throw ConfigError("model width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4 (reserved tokens)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

Tensor ForwardContext::maybe_dropout(const Tensor& x) const {
  if (!training || dropout == 0.0) return x;
  if (rng == nullptr) throw ContractError("training forward pass with dropout needs an Rng");
  return cda::dropout(x, dropout, *rng);
}

Tensor init_weight(Shape shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.truncated_normal(0.02);
  return Tensor(std::move(shape), std::move(v));
}

namespace {

std::string head_prefix(const std::string& prefix, std::size_t i) {
  return prefix + "attn/head/" + std::to_string(i) + "/";
}

}  // namespace

LayerParams LayerParams::create(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store, Rng& rng) {
  const std::size_t d = cfg.d, dh = cfg.head_dim();
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const std::string hp = head_prefix(prefix, i);
    store.add(hp + "wq", init_weight({dh, d}, rng));
    store.add(hp + "wk", init_weight({dh, d}, rng));
    store.add(hp + "wv", init_weight({dh, d}, rng));
  }
  store.add(prefix + "attn/wo", init_weight({d, d}, rng));
  store.add(prefix + "ffn/w1", init_weight({cfg.d_ff, d}, rng));
  store.add(prefix + "ffn/b1", Tensor::zeros({cfg.d_ff}));
  store.add(prefix + "ffn/w2", init_weight({d, cfg.d_ff}, rng));
  store.add(prefix + "ffn/b2", Tensor::zeros({d}));
  store.add(prefix + "ln1/gain", Tensor::full({d}, 1.0));
  store.add(prefix + "ln1/bias", Tensor::zeros({d}));
  store.add(prefix + "ln2/gain", Tensor::full({d}, 1.0));
  store.add(prefix + "ln2/bias", Tensor::zeros({d}));
  return bind(cfg, prefix, store);
}

LayerParams LayerParams::bind(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store) {
  LayerParams p;
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const std::string hp = head_prefix(prefix, i);
    p.wq.push_back(store.at(hp + "wq"));
    p.wk.push_back(store.at(hp + "wk"));
    p.wv.push_back(store.at(hp + "wv"));
  }
  p.wo = store.at(prefix + "attn/wo");
  p.w1 = store.at(prefix + "ffn/w1");
  p.b1 = store.at(prefix + "ffn/b1");
  p.w2 = store.at(prefix + "ffn/w2");
  p.b2 = store.at(prefix + "ffn/b2");
  p.ln1_gain = store.at(prefix + "ln1/gain");
  p.ln1_bias = store.at(prefix + "ln1/bias");
  p.ln2_gain = store.at(prefix + "ln2/gain");
  p.ln2_bias = store.at(prefix + "ln2/bias");
  return p;
}

std::size_t LayerParams::weight_count() const {
  std::size_t n = wo.numel() + w1.numel() + w2.numel();
  for (std::size_t i = 0; i < wq.size(); ++i) n += wq[i].numel() + wk[i].numel() + wv[i].numel();
  return n;
}

std::size_t LayerParams::full_count() const {
  return weight_count() + b1.numel() + b2.numel() + ln1_gain.numel() + ln1_bias.numel() + ln2_gain.numel() +
         ln2_bias.numel();
}

Tensor attention_head(const Tensor& h, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      const ForwardContext& ctx) {
  const Tensor q = linear(h, wq);
  const Tensor k = linear(h, wk);
  const Tensor v = linear(h, wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(wq.rows()));
  const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
  const Tensor weights = ctx.maybe_dropout(softmax(scores, 1));
  return matmul(weights, v);
}

Tensor concat_heads(const Tensor& h, std::span<const Tensor> wq, std::span<const Tensor> wk,
                    std::span<const Tensor> wv, const ForwardContext& ctx) {
  if (wq.size() == 1) return attention_head(h, wq[0], wk[0], wv[0], ctx);
  std::vector<Tensor> heads;
  heads.reserve(wq.size());
  for (std::size_t i = 0; i < wq.size(); ++i) heads.push_back(attention_head(h, wq[i], wk[i], wv[i], ctx));
  return concat_cols(heads);
}

Tensor multi_head(const LayerParams& layer, const Tensor& h, const ForwardContext& ctx) {
  return linear(concat_heads(h, layer.wq, layer.wk, layer.wv, ctx), layer.wo);
}

Tensor sa_sublayer(const LayerParams& layer, const Tensor& h, double eps, const ForwardContext& ctx) {
  return layer_norm(add(h, multi_head(layer, h, ctx)), layer.ln1_gain, layer.ln1_bias, eps);
}

Tensor ffn(const LayerParams& layer, const Tensor& h, const ForwardContext& ctx) {
  const Tensor inner = gelu(linear(h, layer.w1, &layer.b1));
  return ctx.maybe_dropout(linear(inner, layer.w2, &layer.b2));
}

Tensor bert_layer(const LayerParams& layer, const Tensor& h, double eps, const ForwardContext& ctx) {
  const Tensor sa = sa_sublayer(layer, h, eps, ctx);
  return layer_norm(add(ffn(layer, sa, ctx), sa), layer.ln2_gain, layer.ln2_bias, eps);
}

std::size_t param_count(const EncoderConfig& cfg, CountConvention convention) {
  const std::size_t d = cfg.d, dff = cfg.d_ff;
  const std::size_t weights = 4 * d * d + 2 * d * dff;
  if (convention == CountConvention::kWeightsOnly) return cfg.n_layers * weights;
  const std::size_t per_layer = weights + dff + d + 2 * layer_norm_param_count(d);
  const std::size_t embeddings = (cfg.vocab_size + cfg.max_len + 2) * d;
  return cfg.n_layers * per_layer + embeddings;
}

Encoder::Encoder(EncoderConfig cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::string p = kPrefix;
  store.add(p + "embed/token", init_weight({cfg_.vocab_size, cfg_.d}, rng));
  store.add(p + "embed/position", init_weight({cfg_.max_len, cfg_.d}, rng));
  store.add(p + "embed/segment", init_weight({2, cfg_.d}, rng));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l)
    LayerParams::create(cfg_, p + "layer/" + std::to_string(l) + "/", store, rng);
  *this = Encoder(cfg_, store);
}

Encoder::Encoder(EncoderConfig cfg, ParamStore& store) : cfg_(cfg) {
  cfg_.validate();
  const std::string p = kPrefix;
  emb_.token = store.at(p + "embed/token");
  emb_.position = store.at(p + "embed/position");
  emb_.segment = store.at(p + "embed/segment");
  if (emb_.token.rows() != cfg_.vocab_size || emb_.position.rows() != cfg_.max_len) {
    throw ConfigError("stored embedding tables do not match the encoder config");
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l)
    layers_.push_back(LayerParams::bind(cfg_, p + "layer/" + std::to_string(l) + "/", store));
}

void Encoder::check_input(std::span<const std::size_t> tokens, std::span<const std::size_t> segments) const {
  if (tokens.empty()) throw ContractError("encode: empty token sequence");
  if (tokens.size() > cfg_.max_len) {
    throw ContractError("encode: sequence of length " + std::to_string(tokens.size()) + " exceeds max_len " +
                        std::to_string(cfg_.max_len) + "; truncate before encoding");
  }
  if (segments.size() != tokens.size()) throw ContractError("encode: segment ids do not match token count");
  for (std::size_t t : tokens)
    if (t >= cfg_.vocab_size) throw ContractError("encode: token id " + std::to_string(t) + " outside vocabulary");
  for (std::size_t s : segments)
    if (s > 1) throw ContractError("encode: segment id must be 0 or 1");
}

Tensor Encoder::embed(std::span<const std::size_t> tokens, std::span<const std::size_t> segments) const {
  check_input(tokens, segments);
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return add(add(gather_rows(emb_.token, tokens), gather_rows(emb_.position, positions)),
             gather_rows(emb_.segment, segments));
}

Tensor Encoder::encode(std::span<const std::size_t> tokens, std::span<const std::size_t> segments,
                       const ForwardContext& ctx) const {
  Tensor h = embed(tokens, segments);
  for (const auto& layer : layers_) h = bert_layer(layer, h, cfg_.ln_eps, ctx);
  return h;
}

}  // namespace cda
