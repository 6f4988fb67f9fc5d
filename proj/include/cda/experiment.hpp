#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cda/continual.hpp"
#include "cda/data.hpp"

namespace cda {

struct ExperimentSpec {
  std::string data = "synthetic";  // "synthetic" or a directory written by `split`
  std::string mode = "synthetic";  // cda-c, cda-q or synthetic; recorded in reports
  SyntheticConfig synthetic;
  /// A single policy (given, ascending, descending) or explicit domain names.
  std::vector<std::string> order{"given"};
  std::vector<StrategyConfig> strategies;
  TrainConfig train;
  EncoderConfig model;  // vocab_size is filled in from the data
  std::size_t min_count = 1;
  std::filesystem::path out;  // not part of the resolved config

  /// Fills defaults (BASE when no strategy is given, adapter widths) and validates.
  void finalize();
};

ExperimentSpec parse_spec(const std::string& json_text);
ExperimentSpec load_spec(const std::filesystem::path& path);
/// Canonical JSON of every setting that influences results.
std::string spec_to_json(const ExperimentSpec& spec);
/// 16 hex digits of an FNV-1a hash over spec_to_json.
std::string config_hash(const ExperimentSpec& spec);

/// Command-line overrides; unset fields leave the config alone.
struct SpecOverrides {
  std::optional<std::string> data, mode, order;
  std::vector<std::string> strategies;
  std::optional<double> lambda;
  std::optional<std::string> adapter_structure, adapter_insertion;
  std::optional<std::size_t> adapter_dim;
  bool no_adapter_init = false;
  std::optional<double> lr;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;

  void apply(ExperimentSpec& spec) const;
};

/// CDA_OUT_DIR when set, else "runs".
std::filesystem::path default_out_dir();

/// Reorders domains by policy or explicit name list.
std::vector<DomainData> order_domains(std::vector<DomainData> domains, const std::vector<std::string>& order);

struct PreparedData {
  std::vector<EncodedDomain> domains;  // in run order
  std::vector<std::size_t> train_sizes;
  Vocabulary vocab;
  EncoderConfig encoder;
  std::size_t dropped = 0;  // examples whose question did not fit max_len
};

PreparedData prepare_data(const ExperimentSpec& spec, const std::vector<std::string>& order);
inline PreparedData prepare_data(const ExperimentSpec& spec) { return prepare_data(spec, spec.order); }

struct StrategyRun {
  std::string label;
  SequenceResult result;
};

struct RunBundle {
  std::vector<StrategyRun> runs;
  std::string config_hash;
  double wall_seconds = 0.0;
};

/// Trains every strategy over the same data and order. Writes report.json,
/// <label>.csv and <label>.log.jsonl to spec.out; wall time goes to timing.json.
RunBundle cmd_run(const ExperimentSpec& spec);

struct CurvePoint {
  std::string strategy;
  std::size_t step = 0;   // domain being trained, 1-based
  std::size_t epoch = 0;  // 1-based
  double progress = 0.0;  // domains completed, fractional
  double f1 = 0.0;
};

/// F1 on the tracked domain at every epoch boundary from the tracked domain on.
std::vector<CurvePoint> cmd_forgetting_curve(const ExperimentSpec& spec, std::size_t tracked);

struct TransferRow {
  std::string strategy;
  std::vector<double> f1;  // per domain, right after training on it
  double overall = 0.0;
};

/// PROG, PROG without adapter initialization, and INDIVIDUAL on shared data.
std::vector<TransferRow> cmd_forward_transfer(const ExperimentSpec& spec);

struct OrderRow {
  std::string order;
  std::vector<std::string> domains;
  std::string strategy;
  double overall = 0.0;  // final step
};

std::vector<OrderRow> cmd_order_robustness(const ExperimentSpec& spec, const std::vector<std::string>& orders);

/// Scales a reference width for a 768-wide model down to width d (minimum 4),
/// rounding up to a multiple of pal_heads when the structure is PAL.
std::size_t scale_adapter_width(std::size_t reference, std::size_t d, const AdapterConfig& cfg);

struct SweepRow {
  std::size_t reference = 0;
  std::size_t d_s = 0;
  std::vector<double> f1;  // final step
  double overall = 0.0;
  std::size_t adapter_params = 0;  // per domain
};

std::vector<SweepRow> cmd_adapter_sweep(const ExperimentSpec& spec, const std::vector<std::size_t>& sizes);

struct SplitOptions {
  std::string mode = "cda-c";
  /// cda-q: a training file and optionally a test file.
  /// cda-c: one "tag=train.jsonl[,test.jsonl]" entry per domain, in domain order.
  std::vector<std::string> inputs;
  double test_fraction = 0.1;  // cda-q without a test file
  std::size_t n_train = 500;   // cda-c
  std::size_t n_test = 200;    // cda-c; 0 keeps every test example
  std::uint64_t seed = 1;
  std::filesystem::path out;
};

struct SplitSummary {
  std::vector<DomainData> domains;
  std::size_t skipped_missing_spans = 0;
  std::size_t dropped_alignment = 0;
};

/// Builds domains from MRQA files and writes them with write_domains.
SplitSummary cmd_split(const SplitOptions& opts);

/// Re-emits the matrices in a report.json directory as csv or text tables.
std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& dir, const std::string& format);

}  // namespace cda
