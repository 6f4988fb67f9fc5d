#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cda/encoder.hpp"

namespace cda {

enum class AdapterStructure { kPal, kBottleneck };
enum class Insertion { kInside, kAside };
enum class AdapterSite { kAttention = 0, kFeedForward = 1 };

const char* to_string(AdapterStructure s);
const char* to_string(Insertion i);
const char* to_string(AdapterSite s);
AdapterStructure parse_structure(const std::string& s);  // "pal" | "bn"
Insertion parse_insertion(const std::string& s);         // "inside" | "aside"

struct AdapterConfig {
  AdapterStructure structure = AdapterStructure::kBottleneck;
  Insertion insertion = Insertion::kInside;
  std::size_t d_s = 16;       // projection width
  std::size_t d = 32;         // host model width
  std::size_t pal_heads = 2;  // heads of the projected attention layer

  void validate() const;
  /// Short label such as "I-BN" or "A-PAL".
  std::string label() const;
};

/// One adapter instance: down projection, transformation, up projection.
struct AdapterParams {
  Tensor down_w, down_b;           // d_s x d, d_s
  Tensor up_w, up_b;               // d x d_s, d
  std::vector<Tensor> wq, wk, wv;  // PAL only: per head (d_s / heads) x d_s

  /// Weight matrices only (biases excluded).
  std::size_t weight_count() const;
  std::size_t bias_count() const { return down_b.numel() + up_b.numel(); }
};

/// Both adapters (attention site, feed-forward site) of one host layer.
using LayerAdapters = std::array<AdapterParams, 2>;

/// Weights-only count of one adapter instance: PAL 3 d_s^2 + 2 d_s d, BN 2 d_s d.
std::size_t adapter_param_count(const AdapterConfig& cfg);
/// Bias scalars of one instance (d_s + d), reported separately from the formula count.
std::size_t adapter_bias_count(const AdapterConfig& cfg);
/// All scalars of one domain's adapters over n_layers host layers.
std::size_t adapter_budget(const AdapterConfig& cfg, std::size_t n_layers);

/// PAL width whose weight count is closest to a bottleneck of width bn_ds.
/// Only widths divisible by pal_heads are valid (12 heads at BERT-base scale);
/// ties resolve to the smaller width.
std::size_t match_pal_width(std::size_t bn_ds, std::size_t d, std::size_t pal_heads = 12);

/// "adapter/<domain>/<layer>/<site>/"
std::string adapter_prefix(std::size_t domain, std::size_t layer, AdapterSite site);

/// Registers one adapter instance: down projection truncated-normal, up projection zero.
AdapterParams create_adapter(const AdapterConfig& cfg, const std::string& prefix, ParamStore& store, Rng& rng);
AdapterParams bind_adapter(const AdapterConfig& cfg, const std::string& prefix, ParamStore& store);

/// Registers both adapters of every layer for one domain.
std::vector<LayerAdapters> create_domain_adapters(const AdapterConfig& cfg, std::size_t domain,
                                                  std::size_t n_layers, ParamStore& store, Rng& rng);
std::vector<LayerAdapters> bind_domain_adapters(const AdapterConfig& cfg, std::size_t domain,
                                                std::size_t n_layers, ParamStore& store);

/// up(T(down(h))) where T is gelu (BN) or projected multi-head attention (PAL).
/// INSIDE adapters add h back (internal residual) so a zero up projection is the identity.
Tensor adapter_forward(const AdapterConfig& cfg, const AdapterParams& params, const Tensor& h,
                       const ForwardContext& ctx = {});

/// INSIDE: LN(Adapter(MH(h)) + h). ASIDE: LN(MH(h) + Adapter(h) + h).
Tensor adapted_sa(const AdapterConfig& cfg, const LayerParams& layer, const AdapterParams& adapter,
                  const Tensor& h, double eps, const ForwardContext& ctx = {});
/// INSIDE: LN(Adapter(FFN(SA(h))) + SA(h)). ASIDE: LN(FFN(SA(h)) + Adapter(SA(h)) + SA(h)).
Tensor adapted_bl(const AdapterConfig& cfg, const LayerParams& layer, const LayerAdapters& adapters,
                  const Tensor& h, double eps, const ForwardContext& ctx = {});

}  // namespace cda
