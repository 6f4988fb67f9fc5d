#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cda/params.hpp"
#include "cda/rng.hpp"
#include "cda/tensor.hpp"

namespace cda {

enum class Activation { kGelu };

struct EncoderConfig {
  std::size_t d = 32;        // model width
  std::size_t n_heads = 2;   // attention heads; head width is d / n_heads
  std::size_t d_ff = 128;    // feed-forward inner width
  std::size_t n_layers = 2;
  std::size_t vocab_size = 64;
  std::size_t max_len = 128;
  double dropout = 0.1;      // on attention weights and FFN output, training only
  double ln_eps = 1e-12;
  Activation activation = Activation::kGelu;

  std::size_t head_dim() const { return d / n_heads; }
  /// Throws ConfigError when an invariant is broken.
  void validate() const;
};

/// Training-time switches threaded through every forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  double dropout = 0.0;

  Tensor maybe_dropout(const Tensor& x) const;
};

struct LayerParams {
  std::vector<Tensor> wq, wk, wv;  // per head, each (d/n) x d
  Tensor wo;                       // d x d
  Tensor w1, b1;                   // d_ff x d, d_ff
  Tensor w2, b2;                   // d x d_ff, d
  Tensor ln1_gain, ln1_bias;       // after self-attention
  Tensor ln2_gain, ln2_bias;       // after feed-forward

  /// Registers fresh tensors under prefix (e.g. "encoder/layer/0/").
  static LayerParams create(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store, Rng& rng);
  /// Rebinds handles to tensors already present in the store.
  static LayerParams bind(const EncoderConfig& cfg, const std::string& prefix, ParamStore& store);

  /// Sizes of the attention and FFN weight matrices only.
  std::size_t weight_count() const;
  std::size_t full_count() const;
};

struct EmbeddingParams {
  Tensor token;     // vocab_size x d
  Tensor position;  // max_len x d
  Tensor segment;   // 2 x d; 0 = question, 1 = context
};

// Sublayers. Each maps [L x d] to [L x d] except attention_head.

/// Scaled dot-product attention of one head: [L x width] -> [L x rows(wq)].
Tensor attention_head(const Tensor& h, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                      const ForwardContext& ctx);
/// Concatenation of all heads, without an output projection.
Tensor concat_heads(const Tensor& h, std::span<const Tensor> wq, std::span<const Tensor> wk,
                    std::span<const Tensor> wv, const ForwardContext& ctx);
Tensor multi_head(const LayerParams& layer, const Tensor& h, const ForwardContext& ctx);
Tensor sa_sublayer(const LayerParams& layer, const Tensor& h, double eps, const ForwardContext& ctx);
Tensor ffn(const LayerParams& layer, const Tensor& h, const ForwardContext& ctx);
Tensor bert_layer(const LayerParams& layer, const Tensor& h, double eps, const ForwardContext& ctx);

enum class CountConvention { kWeightsOnly, kFull };

/// weights_only: n_layers * (4 d^2 + 2 d d_ff). full adds biases, layer norms and embeddings.
std::size_t param_count(const EncoderConfig& cfg, CountConvention convention);

class Encoder {
 public:
  static constexpr const char* kPrefix = "encoder/";

  /// Creates and registers freshly initialized parameters.
  Encoder(EncoderConfig cfg, ParamStore& store, Rng& rng);
  /// Binds to parameters already registered in store.
  Encoder(EncoderConfig cfg, ParamStore& store);

  const EncoderConfig& config() const { return cfg_; }
  const LayerParams& layer(std::size_t i) const { return layers_[i]; }
  const EmbeddingParams& embeddings() const { return emb_; }

  /// Token + position + segment embedding sum, [L x d].
  Tensor embed(std::span<const std::size_t> tokens, std::span<const std::size_t> segments) const;
  /// Embedding followed by the stacked layers.
  Tensor encode(std::span<const std::size_t> tokens, std::span<const std::size_t> segments,
                const ForwardContext& ctx = {}) const;

  void check_input(std::span<const std::size_t> tokens, std::span<const std::size_t> segments) const;

 private:
  EncoderConfig cfg_;
  EmbeddingParams emb_;
  std::vector<LayerParams> layers_;
};

/// Truncated normal (sigma = 0.02) matrix.
Tensor init_weight(Shape shape, Rng& rng);

}  // namespace cda
