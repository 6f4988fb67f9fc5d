#include "cda/adapter.hpp"

#include <cstdlib>
#include <limits>

#include "cda/error.hpp"

namespace cda {

const char* to_string(AdapterStructure s) { return s == AdapterStructure::kPal ? "PAL" : "BN"; }
const char* to_string(Insertion i) { return i == Insertion::kInside ? "inside" : "aside"; }
const char* to_string(AdapterSite s) { return s == AdapterSite::kAttention ? "attn" : "ffn"; }

AdapterStructure parse_structure(const std::string& s) {
  if (s == "pal" || s == "PAL") return AdapterStructure::kPal;
  if (s == "bn" || s == "BN") return AdapterStructure::kBottleneck;
  throw ConfigError("unknown adapter structure '" + s + "' (expected pal or bn)");
}

Insertion parse_insertion(const std::string& s) {
  if (s == "inside") return Insertion::kInside;
  if (s == "aside") return Insertion::kAside;
  throw ConfigError("unknown adapter insertion '" + s + "' (expected inside or aside)");
}

void AdapterConfig::validate() const {
  if (d_s < 1) throw ConfigError("adapter width d_s must be at least 1");
  if (d < 1) throw ConfigError("adapter host width must be at least 1");
  if (structure == AdapterStructure::kPal) {
    if (pal_heads < 1) throw ConfigError("PAL needs at least one head");
    if (d_s % pal_heads != 0) {
      throw ConfigError("PAL width " + std::to_string(d_s) + " not divisible by " + std::to_string(pal_heads) +
                        " heads");
    }
  }
}

std::string AdapterConfig::label() const {
  return std::string(insertion == Insertion::kInside ? "I-" : "A-") + to_string(structure);
}

std::size_t AdapterParams::weight_count() const {
  std::size_t n = down_w.numel() + up_w.numel();
  for (std::size_t i = 0; i < wq.size(); ++i) n += wq[i].numel() + wk[i].numel() + wv[i].numel();
  return n;
}

std::size_t adapter_param_count(const AdapterConfig& cfg) {
  cfg.validate();
  const std::size_t proj = 2 * cfg.d_s * cfg.d;
  return cfg.structure == AdapterStructure::kPal ? 3 * cfg.d_s * cfg.d_s + proj : proj;
}

std::size_t adapter_bias_count(const AdapterConfig& cfg) {
  cfg.validate();
  return cfg.d_s + cfg.d;
}

std::size_t adapter_budget(const AdapterConfig& cfg, std::size_t n_layers) {
  return n_layers * 2 * (adapter_param_count(cfg) + adapter_bias_count(cfg));
}

std::size_t match_pal_width(std::size_t bn_ds, std::size_t d, std::size_t pal_heads) {
  if (bn_ds < 1) throw ContractError("match_pal_width: bottleneck width must be at least 1");
  if (pal_heads < 1) throw ContractError("match_pal_width: head count must be at least 1");
  const auto target = static_cast<long double>(2 * bn_ds * d);
  std::size_t best = pal_heads;
  long double best_gap = std::numeric_limits<long double>::infinity();
  // The PAL count grows monotonically in d_s, so the scan stops once it overshoots by more than the best gap.
  for (std::size_t ds = pal_heads;; ds += pal_heads) {
    const auto pal = static_cast<long double>(3 * ds * ds + 2 * ds * d);
    const long double gap = pal > target ? pal - target : target - pal;
    if (gap < best_gap) {
      best_gap = gap;
      best = ds;
    }
    if (pal > target && gap >= best_gap) break;
  }
  return best;
}

std::string adapter_prefix(std::size_t domain, std::size_t layer, AdapterSite site) {
  return "adapter/" + std::to_string(domain) + "/" + std::to_string(layer) + "/" + to_string(site) + "/";
}

AdapterParams create_adapter(const AdapterConfig& cfg, const std::string& prefix, ParamStore& store, Rng& rng) {
  cfg.validate();
  store.add(prefix + "down_w", init_weight({cfg.d_s, cfg.d}, rng));
  store.add(prefix + "down_b", Tensor::zeros({cfg.d_s}));
  store.add(prefix + "up_w", Tensor::zeros({cfg.d, cfg.d_s}));
  store.add(prefix + "up_b", Tensor::zeros({cfg.d}));
  if (cfg.structure == AdapterStructure::kPal) {
    const std::size_t dh = cfg.d_s / cfg.pal_heads;
    for (std::size_t i = 0; i < cfg.pal_heads; ++i) {
      const std::string hp = prefix + "pal/" + std::to_string(i) + "/";
      store.add(hp + "wq", init_weight({dh, cfg.d_s}, rng));
      store.add(hp + "wk", init_weight({dh, cfg.d_s}, rng));
      store.add(hp + "wv", init_weight({dh, cfg.d_s}, rng));
    }
  }
  return bind_adapter(cfg, prefix, store);
}

AdapterParams bind_adapter(const AdapterConfig& cfg, const std::string& prefix, ParamStore& store) {
  AdapterParams p;
  p.down_w = store.at(prefix + "down_w");
  p.down_b = store.at(prefix + "down_b");
  p.up_w = store.at(prefix + "up_w");
  p.up_b = store.at(prefix + "up_b");
  if (cfg.structure == AdapterStructure::kPal) {
    for (std::size_t i = 0; i < cfg.pal_heads; ++i) {
      const std::string hp = prefix + "pal/" + std::to_string(i) + "/";
      p.wq.push_back(store.at(hp + "wq"));
      p.wk.push_back(store.at(hp + "wk"));
      p.wv.push_back(store.at(hp + "wv"));
    }
  }
  return p;
}

std::vector<LayerAdapters> create_domain_adapters(const AdapterConfig& cfg, std::size_t domain,
                                                  std::size_t n_layers, ParamStore& store, Rng& rng) {
  std::vector<LayerAdapters> out;
  for (std::size_t l = 0; l < n_layers; ++l) {
    LayerAdapters la;
    for (AdapterSite site : {AdapterSite::kAttention, AdapterSite::kFeedForward})
      la[static_cast<std::size_t>(site)] = create_adapter(cfg, adapter_prefix(domain, l, site), store, rng);
    out.push_back(std::move(la));
  }
  return out;
}

std::vector<LayerAdapters> bind_domain_adapters(const AdapterConfig& cfg, std::size_t domain,
                                                std::size_t n_layers, ParamStore& store) {
  std::vector<LayerAdapters> out;
  for (std::size_t l = 0; l < n_layers; ++l) {
    LayerAdapters la;
    for (AdapterSite site : {AdapterSite::kAttention, AdapterSite::kFeedForward})
      la[static_cast<std::size_t>(site)] = bind_adapter(cfg, adapter_prefix(domain, l, site), store);
    out.push_back(std::move(la));
  }
  return out;
}

Tensor adapter_forward(const AdapterConfig& cfg, const AdapterParams& params, const Tensor& h,
                       const ForwardContext& ctx) {
  const Tensor down = linear(h, params.down_w, &params.down_b);
  const Tensor mid = cfg.structure == AdapterStructure::kPal
                         ? concat_heads(down, params.wq, params.wk, params.wv, ctx)
                         : gelu(down);
  const Tensor up = linear(mid, params.up_w, &params.up_b);
  if (cfg.insertion == Insertion::kInside) return add(up, h);
  return up;
}

Tensor adapted_sa(const AdapterConfig& cfg, const LayerParams& layer, const AdapterParams& adapter,
                  const Tensor& h, double eps, const ForwardContext& ctx) {
  const Tensor mh = multi_head(layer, h, ctx);
  const Tensor pre = cfg.insertion == Insertion::kInside
                         ? add(h, adapter_forward(cfg, adapter, mh, ctx))
                         : add(add(h, mh), adapter_forward(cfg, adapter, h, ctx));
  return layer_norm(pre, layer.ln1_gain, layer.ln1_bias, eps);
}

Tensor adapted_bl(const AdapterConfig& cfg, const LayerParams& layer, const LayerAdapters& adapters,
                  const Tensor& h, double eps, const ForwardContext& ctx) {
  const Tensor sa = adapted_sa(cfg, layer, adapters[0], h, eps, ctx);
  const Tensor f = ffn(layer, sa, ctx);
  const Tensor pre = cfg.insertion == Insertion::kInside
                         ? add(adapter_forward(cfg, adapters[1], f, ctx), sa)
                         : add(add(f, sa), adapter_forward(cfg, adapters[1], sa, ctx));
  return layer_norm(pre, layer.ln2_gain, layer.ln2_bias, eps);
}

}  // namespace cda
