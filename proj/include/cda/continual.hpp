#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cda/adapter.hpp"
#include "cda/qa.hpp"

namespace cda {

enum class StrategyKind { kBase, kReg, kProg, kIndividual };

const char* to_string(StrategyKind k);
StrategyKind parse_strategy(const std::string& s);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kBase;
  double lambda = 1.0;                  // REG only
  std::optional<AdapterConfig> adapter;  // PROG only
  bool init_from_prev = true;           // PROG only

  void validate() const;
  /// BASE, REG, PROG_I-BN, PROG_I-BN_noinit, INDIVIDUAL.
  std::string label() const;
};

struct TrainConfig {
  double learning_rate = 2e-3;
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double warmup_fraction = 0.10;
  std::uint64_t seed = 1;
  std::size_t max_answer_length = 30;
  std::size_t fisher_samples = 1000;

  void validate() const;
};

/// Linear warmup over the first floor(warmup_fraction * total) steps, then linear decay to zero.
double scheduled_lr(double base, std::size_t step, std::size_t total, double warmup_fraction);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  /// Updates the named tensors from their gradients. Naming a tensor that is
  /// not trainable throws InvariantViolation.
  void step(ParamStore& store, const std::vector<std::string>& names, double lr);
  std::size_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

using ParamMap = std::map<std::string, Tensor>;

/// Mean squared per-example gradient of the QA loss at the gold span, over
/// min(sample_count, n) examples drawn without replacement. Covers every
/// trainable parameter. Examples without a gold span are skipped.
ParamMap fisher_diagonal(QAModel& model, std::span<const EncodedExample> examples, const Route& route,
                         std::size_t sample_count, std::uint64_t seed);

/// Sum over names in fisher of F * (theta - anchor)^2, recorded on the active graph.
Tensor ewc_penalty(const ParamStore& theta, const ParamMap& anchor, const ParamMap& fisher);
double ewc_penalty_value(const ParamStore& theta, const ParamMap& anchor, const ParamMap& fisher);

struct TrainLogRecord {
  std::size_t domain = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;  // within the domain
  double loss = 0.0;     // QA loss, batch mean
  double penalty = 0.0;  // unweighted EWC term
  double lr = 0.0;
};

void write_log_jsonl(std::ostream& out, const std::vector<TrainLogRecord>& log);

class ContinualLearner;
/// Called after every epoch of every domain.
using EpochCallback = std::function<void(const ContinualLearner&, std::size_t domain, std::size_t epoch)>;

/// Owns one model and trains it over domains that arrive one at a time.
class ContinualLearner {
 public:
  ContinualLearner(const EncoderConfig& encoder, const StrategyConfig& strategy, const TrainConfig& train);

  /// Trains the next domain in sequence. Examples without a gold span are not used.
  void train_domain(std::span<const EncodedExample> train, const EpochCallback& on_epoch = {});

  std::size_t seen() const { return seen_; }
  Route route_for(std::size_t domain) const;

  DomainScore evaluate(std::size_t domain, std::span<const EncodedExample> test) const;
  /// Scores on domains 0..seen()-1, each routed to its own adapters under PROG.
  std::vector<DomainScore> evaluate_all_seen(const std::vector<std::span<const EncodedExample>>& tests) const;

  QAModel& model() { return model_; }
  const QAModel& model() const { return model_; }
  const StrategyConfig& strategy() const { return strategy_; }
  const TrainConfig& train_config() const { return train_; }
  const std::vector<TrainLogRecord>& log() const { return log_; }

  /// REG state after the first domain; absent otherwise.
  const std::optional<ParamMap>& anchor() const { return anchor_; }
  const std::optional<ParamMap>& fisher() const { return fisher_; }

  std::uint64_t domain_seed(std::size_t domain) const;

 private:
  void prepare_prog(std::size_t t);
  std::uint64_t frozen_digest(std::size_t t) const;

  StrategyConfig strategy_;
  TrainConfig train_;
  Rng init_rng_;
  QAModel model_;
  ParamStore pristine_;
  std::optional<ParamMap> anchor_;
  std::optional<ParamMap> fisher_;
  std::size_t seen_ = 0;
  std::vector<TrainLogRecord> log_;
};

/// Lower-triangular (step, domain) score table.
class ResultsMatrix {
 public:
  ResultsMatrix() = default;
  explicit ResultsMatrix(std::vector<std::string> domains) : domains_(std::move(domains)) {}

  /// Appends the row for the next step; it must hold exactly steps()+1 scores.
  void add_row(std::vector<DomainScore> row);

  const std::vector<std::string>& domains() const { return domains_; }
  std::size_t steps() const { return rows_.size(); }
  std::optional<DomainScore> cell(std::size_t step, std::size_t domain) const;
  const std::vector<DomainScore>& row(std::size_t step) const { return rows_.at(step); }
  /// Sum of F1 over the domains seen at this step.
  double overall(std::size_t step) const;
  /// 100 * (F1(step, k) - F1(k, k)) / F1(k, k); absent on the diagonal or when F1(k, k) is 0.
  std::optional<double> rel_change(std::size_t step, std::size_t domain) const;

  /// Columns: step, domain, em, f1, overall, rel_change. Steps are 1-based.
  void write_csv(std::ostream& out) const;
  std::string to_json_string() const;

 private:
  std::vector<std::string> domains_;
  std::vector<std::vector<DomainScore>> rows_;
};

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

struct SequenceResult {
  ResultsMatrix matrix;
  std::vector<TrainLogRecord> log;
  std::size_t param_count = 0;
};

/// Trains the strategy over domains in order, evaluating all seen domains
/// after each. Each domain's training split is released once it has been used.
SequenceResult run_sequence(std::vector<EncodedDomain> domains, const EncoderConfig& encoder,
                            const StrategyConfig& strategy, const TrainConfig& train,
                            const EpochCallback& on_epoch = {});

}  // namespace cda
