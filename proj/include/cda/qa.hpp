#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cda/adapter.hpp"
#include "cda/data.hpp"
#include "cda/encoder.hpp"
#include "cda/error.hpp"

namespace cda {

/// [CLS] question [SEP] context [SEP] with segment ids 0/1.
struct EncodedPair {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> segments;
  std::vector<bool> context_mask;  // true where a span may start or end
  std::size_t context_offset = 0;  // sequence position of context token 0
  std::size_t context_len = 0;     // context tokens kept after truncation
};

class InputTooLong : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Truncates the context, never the question, to fit max_len.
EncodedPair encode_pair(const std::vector<std::string>& question, const std::vector<std::string>& context,
                        const Vocabulary& vocab, std::size_t max_len);

struct EncodedExample {
  QAExample example;
  EncodedPair pair;
  /// Gold span in sequence positions; absent when truncation cut the answer off.
  std::optional<std::pair<std::size_t, std::size_t>> gold;
};

struct EncodedDomain {
  std::string name;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> test;
  std::size_t dropped = 0;  // questions too long for max_len
};

EncodedDomain encode_domain(const DomainData& domain, const Vocabulary& vocab, std::size_t max_len);

struct SpanLogits {
  Tensor start;  // [L], unmasked
  Tensor end;
};

struct SpanPrediction {
  std::size_t start = 0;  // sequence positions, inclusive
  std::size_t end = 0;
  double score = 0.0;     // start + end log-probability
  std::string text;
};

class NoContextError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Best (s, e) with s <= e, e - s < max_answer_length, both inside the mask.
/// Ties go to the smaller s, then the smaller e. text is left empty.
SpanPrediction predict_span(const Tensor& start_logits, const Tensor& end_logits, const std::vector<bool>& context_mask,
                            std::size_t max_answer_length);

/// cross_entropy(start, s) + cross_entropy(end, e). Gold must lie inside the mask.
Tensor qa_loss(const SpanLogits& logits, const std::vector<bool>& context_mask, std::pair<std::size_t, std::size_t> gold);

/// Which adapter set and output head answer a query.
struct Route {
  std::size_t head = 0;
  std::optional<std::size_t> adapters;  // domain index of the adapter set, if any
};

/// Encoder with per-domain span heads and optional per-domain adapter sets.
///
/// Parameter names: "encoder/..." for the backbone, "head/<k>/{w,b}" for
/// span heads, "adapter/<k>/<layer>/<site>/<tensor>" for adapters.
class QAModel {
 public:
  QAModel(const EncoderConfig& cfg, Rng& rng);
  QAModel(const QAModel&) = delete;
  QAModel& operator=(const QAModel&) = delete;

  const EncoderConfig& config() const { return encoder_.config(); }
  const Encoder& encoder() const { return encoder_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void add_head(std::size_t domain, Rng& rng);
  bool has_head(std::size_t domain) const { return heads_.count(domain) != 0; }
  static std::string head_prefix(std::size_t domain);

  void add_adapters(std::size_t domain, const AdapterConfig& cfg, Rng& rng);
  bool has_adapters(std::size_t domain) const { return adapters_.count(domain) != 0; }
  /// Overwrites domain `to`'s adapter values with domain `from`'s.
  void copy_adapters(std::size_t from, std::size_t to);
  static std::string adapter_domain_prefix(std::size_t domain);
  const std::optional<AdapterConfig>& adapter_config() const { return adapter_cfg_; }

  /// Overwrites every parameter value from a store with identical names and shapes.
  void load_values(const ParamStore& source);

  SpanLogits forward(const EncodedPair& input, const Route& route, const ForwardContext& ctx = {}) const;

 private:
  ParamStore params_;
  Encoder encoder_;
  std::map<std::size_t, std::pair<Tensor, Tensor>> heads_;
  std::optional<AdapterConfig> adapter_cfg_;
  std::map<std::size_t, std::vector<LayerAdapters>> adapters_;
};

/// Runs the model and decodes a span in context-token coordinates.
SpanPrediction predict(const QAModel& model, const EncodedExample& ex, const Route& route,
                       std::size_t max_answer_length);

struct DomainScore {
  double em = 0.0;  // percentage points
  double f1 = 0.0;
};

/// Mean EM and F1 (x100). The result does not depend on example order.
DomainScore evaluate_domain(const QAModel& model, std::span<const EncodedExample> examples, const Route& route,
                            std::size_t max_answer_length);

struct PredictionRecord {
  std::string id;
  std::string text;
  std::size_t start = 0;  // context token index
  std::size_t end = 0;
  double score = 0.0;
};

/// One JSON object per line: {"id","text","start","end","score"}.
void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(std::istream& in);
/// Scores predictions against examples matched by id; missing ids count as empty answers.
DomainScore score_predictions(const std::vector<PredictionRecord>& predictions, const std::vector<QAExample>& gold);

}  // namespace cda
