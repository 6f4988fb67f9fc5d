#include "cda/continual.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "cda/error.hpp"
#include "json.hpp"

namespace cda {

const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kBase: return "BASE";
    case StrategyKind::kReg: return "REG";
    case StrategyKind::kProg: return "PROG";
    case StrategyKind::kIndividual: return "INDIVIDUAL";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (u == "BASE") return StrategyKind::kBase;
  if (u == "REG" || u == "EWC") return StrategyKind::kReg;
  if (u == "PROG") return StrategyKind::kProg;
  if (u == "INDIVIDUAL") return StrategyKind::kIndividual;
  throw ConfigError("unknown strategy '" + s + "' (expected base, reg, prog or individual)");
}

void StrategyConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
  if (kind == StrategyKind::kProg) {
    if (!adapter) throw ConfigError("PROG needs an adapter configuration");
    adapter->validate();
  } else if (adapter) {
    throw ConfigError(std::string("adapter configuration given for ") + to_string(kind));
  }
}

std::string StrategyConfig::label() const {
  std::string s = to_string(kind);
  if (kind == StrategyKind::kProg && adapter) {
    s += "_" + adapter->label();
    if (!init_from_prev) s += "_noinit";
  }
  return s;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup fraction must lie in [0, 1)");
  if (max_answer_length < 1) throw ConfigError("max answer length must be at least 1");
  if (fisher_samples < 1) throw ConfigError("fisher sample count must be at least 1");
}

double scheduled_lr(double base, std::size_t step, std::size_t total, double warmup_fraction) {
  if (total == 0 || step >= total) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

void Adam::step(ParamStore& store, const std::vector<std::string>& names, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& name : names) {
    Tensor& p = store.at(name);
    if (!p.requires_grad()) throw InvariantViolation("optimizer asked to update frozen parameter '" + name + "'");
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

ParamMap fisher_diagonal(QAModel& model, std::span<const EncodedExample> examples, const Route& route,
                         std::size_t sample_count, std::uint64_t seed) {
  if (sample_count == 0) throw ContractError("fisher_diagonal: sample count must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (examples[i].gold) idx.push_back(i);
  if (idx.empty()) throw DataError("fisher_diagonal: no examples with a gold span");
  if (idx.size() > sample_count) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(sample_count);
    std::sort(idx.begin(), idx.end());
  }

  ParamStore& store = model.params();
  const auto names = store.trainable_names();
  ParamMap fisher;
  for (const auto& n : names) fisher.emplace(n, Tensor::zeros(store.at(n).shape()));
  for (std::size_t i : idx) {
    const EncodedExample& ex = examples[i];
    GraphScope scope;
    store.zero_grad();
    const Tensor loss = qa_loss(model.forward(ex.pair, route), ex.pair.context_mask, *ex.gold);
    backward(loss);
    for (const auto& n : names) {
      const auto g = store.at(n).grad();
      if (g.empty()) continue;
      auto f = fisher.at(n).mutable_data();
      for (std::size_t j = 0; j < f.size(); ++j) f[j] += g[j] * g[j];
    }
  }
  store.zero_grad();
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (auto& [n, f] : fisher)
    for (double& x : f.mutable_data()) x *= inv;
  return fisher;
}

namespace {

const Tensor& lookup(const ParamMap& map, const std::string& name, const char* what) {
  auto it = map.find(name);
  if (it == map.end()) throw ContractError(std::string("ewc_penalty: ") + what + " lacks '" + name + "'");
  return it->second;
}

}  // namespace

Tensor ewc_penalty(const ParamStore& theta, const ParamMap& anchor, const ParamMap& fisher) {
  std::optional<Tensor> total;
  for (const auto& [name, f] : fisher) {
    const Tensor term = weighted_sq_dist(theta.at(name), lookup(anchor, name, "anchor"), f);
    total = total ? add(*total, term) : term;
  }
  return total ? *total : Tensor::scalar(0.0);
}

double ewc_penalty_value(const ParamStore& theta, const ParamMap& anchor, const ParamMap& fisher) {
  double total = 0.0;
  for (const auto& [name, f] : fisher) {
    const Tensor& t = theta.at(name);
    const Tensor& a = lookup(anchor, name, "anchor");
    if (t.shape() != a.shape() || t.shape() != f.shape())
      throw DimensionError("ewc_penalty: shape mismatch for '" + name + "'");
    double s = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double diff = t[i] - a[i];
      s += f[i] * diff * diff;
    }
    total += s;
  }
  return total;
}

void write_log_jsonl(std::ostream& out, const std::vector<TrainLogRecord>& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json j = {{"domain", r.domain}, {"epoch", r.epoch}, {"step", r.step},
                                {"loss", r.loss},     {"penalty", r.penalty}, {"lr", r.lr}};
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// ContinualLearner

ContinualLearner::ContinualLearner(const EncoderConfig& encoder, const StrategyConfig& strategy,
                                   const TrainConfig& train)
    : strategy_(strategy), train_(train), init_rng_(derive_seed(train.seed, "init")), model_(encoder, init_rng_) {
  strategy_.validate();
  train_.validate();
  if (strategy_.kind != StrategyKind::kProg) {
    Rng head_rng(derive_seed(domain_seed(0), "head"));
    model_.add_head(0, head_rng);
    model_.params().set_trainable("", true);
    if (strategy_.kind == StrategyKind::kIndividual) pristine_ = model_.params().clone();
  }
}

std::uint64_t ContinualLearner::domain_seed(std::size_t domain) const { return derive_seed(train_.seed, domain); }

Route ContinualLearner::route_for(std::size_t domain) const {
  if (strategy_.kind != StrategyKind::kProg) return {0, std::nullopt};
  if (domain >= seen_) throw ContractError("no adapters trained for domain " + std::to_string(domain));
  return {domain, domain};
}

std::uint64_t ContinualLearner::frozen_digest(std::size_t t) const {
  const ParamStore& store = model_.params();
  std::uint64_t h = store.digest(Encoder::kPrefix);
  for (std::size_t k = 0; k < t; ++k) {
    h = mix64(h ^ store.digest(QAModel::adapter_domain_prefix(k)));
    h = mix64(h ^ store.digest(QAModel::head_prefix(k)));
  }
  return h;
}

void ContinualLearner::prepare_prog(std::size_t t) {
  const std::uint64_t ds = domain_seed(t);
  Rng adapter_rng(derive_seed(ds, "adapter"));
  Rng head_rng(derive_seed(ds, "head"));
  model_.add_adapters(t, *strategy_.adapter, adapter_rng);
  model_.add_head(t, head_rng);
  if (strategy_.init_from_prev && t > 0) model_.copy_adapters(t - 1, t);
  ParamStore& store = model_.params();
  store.freeze_all();
  store.set_trainable(QAModel::adapter_domain_prefix(t), true);
  store.set_trainable(QAModel::head_prefix(t), true);
}

void ContinualLearner::train_domain(std::span<const EncodedExample> train, const EpochCallback& on_epoch) {
  const std::size_t t = seen_;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train[i].gold) idx.push_back(i);
  if (idx.empty()) throw DataError("domain " + std::to_string(t) + " has no trainable examples");

  const bool prog = strategy_.kind == StrategyKind::kProg;
  if (prog) prepare_prog(t);
  if (strategy_.kind == StrategyKind::kIndividual && t > 0) model_.load_values(pristine_);
  const std::uint64_t before = prog ? frozen_digest(t) : 0;

  const std::uint64_t ds = domain_seed(t);
  Rng shuffle_rng(derive_seed(ds, "shuffle"));
  Rng dropout_rng(derive_seed(ds, "dropout"));
  const ForwardContext ctx{true, &dropout_rng, model_.config().dropout};
  const Route route{prog ? t : 0, prog ? std::optional<std::size_t>(t) : std::nullopt};
  ParamStore& store = model_.params();
  const auto names = store.trainable_names();
  const bool penalize = strategy_.kind == StrategyKind::kReg && anchor_.has_value();

  const std::size_t bs = train_.batch_size;
  const std::size_t per_epoch = (idx.size() + bs - 1) / bs;
  const std::size_t total = per_epoch * train_.epochs;
  Adam adam;
  std::size_t step = 0;
  seen_ = t + 1;  // routing for the new domain is valid from here on
  for (std::size_t epoch = 0; epoch < train_.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    for (std::size_t b = 0; b < idx.size(); b += bs) {
      const std::size_t e = std::min(idx.size(), b + bs);
      GraphScope scope;
      store.zero_grad();
      std::optional<Tensor> acc;
      for (std::size_t i = b; i < e; ++i) {
        const EncodedExample& ex = train[idx[i]];
        const Tensor l = qa_loss(model_.forward(ex.pair, route, ctx), ex.pair.context_mask, *ex.gold);
        acc = acc ? add(*acc, l) : l;
      }
      const Tensor qa = scale(*acc, 1.0 / static_cast<double>(e - b));
      Tensor loss = qa;
      double pen = 0.0;
      if (penalize) {
        const Tensor p = ewc_penalty(store, *anchor_, *fisher_);
        pen = p.item();
        loss = add(qa, scale(p, strategy_.lambda));
      }
      backward(loss);
      const double lr = scheduled_lr(train_.learning_rate, step, total, train_.warmup_fraction);
      adam.step(store, names, lr);
      log_.push_back({t, epoch, step, qa.item(), pen, lr});
      ++step;
    }
    if (on_epoch) on_epoch(*this, t, epoch);
  }
  store.zero_grad();

  if (prog && frozen_digest(t) != before)
    throw InvariantViolation("frozen parameters changed while training domain " + std::to_string(t));
  if (strategy_.kind == StrategyKind::kReg) {
    ParamMap anchor;
    for (const auto& [name, p] : store) anchor.emplace(name, p.clone());
    anchor_ = std::move(anchor);
    fisher_ = fisher_diagonal(model_, train, route, train_.fisher_samples, derive_seed(ds, "fisher"));
  }
}

DomainScore ContinualLearner::evaluate(std::size_t domain, std::span<const EncodedExample> test) const {
  return evaluate_domain(model_, test, route_for(domain), train_.max_answer_length);
}

std::vector<DomainScore> ContinualLearner::evaluate_all_seen(
    const std::vector<std::span<const EncodedExample>>& tests) const {
  if (tests.size() < seen_) throw ContractError("evaluate_all_seen: missing test sets for seen domains");
  std::vector<DomainScore> row;
  for (std::size_t k = 0; k < seen_; ++k) row.push_back(evaluate(k, tests[k]));
  return row;
}

// ---------------------------------------------------------------------------
// ResultsMatrix

void ResultsMatrix::add_row(std::vector<DomainScore> row) {
  if (row.size() != rows_.size() + 1)
    throw ContractError("results row " + std::to_string(rows_.size() + 1) + " must hold " +
                        std::to_string(rows_.size() + 1) + " scores, got " + std::to_string(row.size()));
  if (!domains_.empty() && row.size() > domains_.size()) throw ContractError("results row exceeds the domain list");
  rows_.push_back(std::move(row));
}

std::optional<DomainScore> ResultsMatrix::cell(std::size_t step, std::size_t domain) const {
  if (step >= rows_.size() || domain > step) return std::nullopt;
  return rows_[step][domain];
}

double ResultsMatrix::overall(std::size_t step) const {
  double s = 0.0;
  for (const auto& c : rows_.at(step)) s += c.f1;
  return s;
}

std::optional<double> ResultsMatrix::rel_change(std::size_t step, std::size_t domain) const {
  if (step >= rows_.size() || domain >= step) return std::nullopt;
  const double first = rows_[domain][domain].f1;
  if (first == 0.0) return std::nullopt;
  return 100.0 * (rows_[step][domain].f1 - first) / first;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ResultsMatrix::write_csv(std::ostream& out) const {
  out << "step,domain,em,f1,overall,rel_change\n";
  for (std::size_t s = 0; s < rows_.size(); ++s) {
    const std::string overall_text = format_double(overall(s));
    for (std::size_t k = 0; k <= s; ++k) {
      const auto rc = rel_change(s, k);
      out << s + 1 << ',' << (k < domains_.size() ? domains_[k] : std::to_string(k)) << ','
          << format_double(rows_[s][k].em) << ',' << format_double(rows_[s][k].f1) << ',' << overall_text << ','
          << (rc ? format_double(*rc) : "") << '\n';
    }
  }
}

std::string ResultsMatrix::to_json_string() const {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < rows_.size(); ++s) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k <= s; ++k) {
      nlohmann::ordered_json c = {{"domain", k < domains_.size() ? domains_[k] : std::to_string(k)},
                                  {"em", rows_[s][k].em},
                                  {"f1", rows_[s][k].f1}};
      const auto rc = rel_change(s, k);
      c["rel_change"] = rc ? nlohmann::ordered_json(*rc) : nlohmann::ordered_json(nullptr);
      cells.push_back(std::move(c));
    }
    rows.push_back({{"step", s + 1}, {"cells", std::move(cells)}, {"overall", overall(s)}});
  }
  nlohmann::ordered_json j = {{"domains", domains_}, {"rows", std::move(rows)}};
  return j.dump(2);
}

SequenceResult run_sequence(std::vector<EncodedDomain> domains, const EncoderConfig& encoder,
                            const StrategyConfig& strategy, const TrainConfig& train, const EpochCallback& on_epoch) {
  if (domains.empty()) throw ContractError("run_sequence needs at least one domain");
  std::vector<std::string> names;
  for (const auto& d : domains) names.push_back(d.name);
  SequenceResult out{ResultsMatrix(names), {}, 0};
  ContinualLearner learner(encoder, strategy, train);
  std::vector<std::span<const EncodedExample>> tests;
  for (auto& d : domains) {
    learner.train_domain(d.train, on_epoch);
    d.train.clear();
    d.train.shrink_to_fit();
    tests.emplace_back(d.test);
    out.matrix.add_row(learner.evaluate_all_seen(tests));
  }
  out.log = learner.log();
  out.param_count = learner.model().params().scalar_count();
  return out;
}

}  // namespace cda
