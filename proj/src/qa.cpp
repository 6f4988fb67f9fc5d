#include "cda/qa.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "cda/metrics.hpp"
#include "json.hpp"

namespace cda {

EncodedPair encode_pair(const std::vector<std::string>& question, const std::vector<std::string>& context,
                        const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3 || question.size() > max_len - 3) {
    throw InputTooLong("question of " + std::to_string(question.size()) + " tokens does not fit max_len " +
                       std::to_string(max_len));
  }
  EncodedPair p;
  const std::size_t budget = max_len - 3 - question.size();
  p.context_len = std::min(context.size(), budget);
  p.ids.push_back(Vocabulary::kCls);
  for (const auto& t : question) p.ids.push_back(vocab.id(t));
  p.ids.push_back(Vocabulary::kSep);
  p.segments.assign(p.ids.size(), 0);
  p.context_offset = p.ids.size();
  for (std::size_t i = 0; i < p.context_len; ++i) p.ids.push_back(vocab.id(context[i]));
  p.ids.push_back(Vocabulary::kSep);
  p.segments.resize(p.ids.size(), 1);
  p.context_mask.assign(p.ids.size(), false);
  for (std::size_t i = 0; i < p.context_len; ++i) p.context_mask[p.context_offset + i] = true;
  return p;
}

EncodedDomain encode_domain(const DomainData& domain, const Vocabulary& vocab, std::size_t max_len) {
  EncodedDomain out;
  out.name = domain.name;
  auto encode_split = [&](const std::vector<QAExample>& src, std::vector<EncodedExample>& dst) {
    for (const auto& ex : src) {
      EncodedExample e;
      try {
        e.pair = encode_pair(ex.question_tokens, ex.context_tokens, vocab, max_len);
      } catch (const InputTooLong&) {
        ++out.dropped;
        continue;
      }
      if (ex.end < e.pair.context_len) e.gold = std::make_pair(e.pair.context_offset + ex.start, e.pair.context_offset + ex.end);
      e.example = ex;
      dst.push_back(std::move(e));
    }
  };
  encode_split(domain.train, out.train);
  encode_split(domain.test, out.test);
  return out;
}

namespace {

std::vector<double> masked_log_softmax(std::span<const double> logits, const std::vector<bool>& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += std::exp(logits[i] - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

SpanPrediction predict_span(const Tensor& start_logits, const Tensor& end_logits, const std::vector<bool>& context_mask,
                            std::size_t max_answer_length) {
  const std::size_t n = start_logits.numel();
  if (end_logits.numel() != n || context_mask.size() != n) throw DimensionError("predict_span: length mismatch");
  if (max_answer_length == 0) throw ContractError("predict_span: max_answer_length must be positive");
  if (std::none_of(context_mask.begin(), context_mask.end(), [](bool b) { return b; }))
    throw NoContextError("predict_span: context mask is empty");
  const auto ls = masked_log_softmax(start_logits.data(), context_mask);
  const auto le = masked_log_softmax(end_logits.data(), context_mask);
  SpanPrediction best;
  bool found = false;
  for (std::size_t s = 0; s < n; ++s) {
    if (!context_mask[s]) continue;
    const std::size_t last = std::min(n - 1, s + max_answer_length - 1);
    for (std::size_t e = s; e <= last; ++e) {
      if (!context_mask[e]) continue;
      const double score = ls[s] + le[e];
      if (!found || score > best.score) {
        best.start = s;
        best.end = e;
        best.score = score;
        found = true;
      }
    }
  }
  return best;
}

Tensor qa_loss(const SpanLogits& logits, const std::vector<bool>& context_mask, std::pair<std::size_t, std::size_t> gold) {
  if (gold.first >= context_mask.size() || gold.second >= context_mask.size() || !context_mask[gold.first] ||
      !context_mask[gold.second]) {
    throw ContractError("qa_loss: gold span (" + std::to_string(gold.first) + ", " + std::to_string(gold.second) +
                        ") lies outside the context mask");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const Tensor start = masked_fill(logits.start, context_mask, kNegInf);
  const Tensor end = masked_fill(logits.end, context_mask, kNegInf);
  return add(cross_entropy(start, gold.first), cross_entropy(end, gold.second));
}

// ---------------------------------------------------------------------------
// QAModel

QAModel::QAModel(const EncoderConfig& cfg, Rng& rng) : params_(), encoder_(cfg, params_, rng) {}

std::string QAModel::head_prefix(std::size_t domain) { return "head/" + std::to_string(domain) + "/"; }

std::string QAModel::adapter_domain_prefix(std::size_t domain) { return "adapter/" + std::to_string(domain) + "/"; }

void QAModel::add_head(std::size_t domain, Rng& rng) {
  const std::string p = head_prefix(domain);
  Tensor& w = params_.add(p + "w", init_weight({2, config().d}, rng));
  Tensor& b = params_.add(p + "b", Tensor::zeros({2}));
  heads_[domain] = {w, b};
}

void QAModel::add_adapters(std::size_t domain, const AdapterConfig& cfg, Rng& rng) {
  if (cfg.d != config().d) throw ConfigError("adapter host width does not match the encoder width");
  if (adapter_cfg_ && (adapter_cfg_->structure != cfg.structure || adapter_cfg_->insertion != cfg.insertion ||
                       adapter_cfg_->d_s != cfg.d_s || adapter_cfg_->pal_heads != cfg.pal_heads))
    throw ConfigError("all domains of one model must share the adapter configuration");
  adapter_cfg_ = cfg;
  adapters_[domain] = create_domain_adapters(cfg, domain, config().n_layers, params_, rng);
}

void QAModel::copy_adapters(std::size_t from, std::size_t to) {
  const std::string src = adapter_domain_prefix(from);
  const std::string dst = adapter_domain_prefix(to);
  for (const auto& name : params_.names_with_prefix(src)) {
    const Tensor& s = params_.at(name);
    Tensor& d = params_.at(dst + name.substr(src.size()));
    std::copy(s.data().begin(), s.data().end(), d.mutable_data().begin());
  }
}

void QAModel::load_values(const ParamStore& source) {
  for (auto& [name, t] : params_) {
    const Tensor& s = source.at(name);
    if (s.shape() != t.shape()) throw DimensionError("load_values: shape mismatch for " + name);
    std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
  }
}

SpanLogits QAModel::forward(const EncodedPair& input, const Route& route, const ForwardContext& ctx) const {
  auto head = heads_.find(route.head);
  if (head == heads_.end()) throw ContractError("no span head for domain " + std::to_string(route.head));
  const std::vector<LayerAdapters>* adapters = nullptr;
  if (route.adapters) {
    auto it = adapters_.find(*route.adapters);
    if (it == adapters_.end()) throw ContractError("no adapters for domain " + std::to_string(*route.adapters));
    adapters = &it->second;
  }
  const EncoderConfig& cfg = config();
  Tensor h = encoder_.embed(input.ids, input.segments);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    h = adapters ? adapted_bl(*adapter_cfg_, encoder_.layer(l), (*adapters)[l], h, cfg.ln_eps, ctx)
                 : bert_layer(encoder_.layer(l), h, cfg.ln_eps, ctx);
  }
  const Tensor logits = linear(h, head->second.first, &head->second.second);
  return {column(logits, 0), column(logits, 1)};
}

SpanPrediction predict(const QAModel& model, const EncodedExample& ex, const Route& route,
                       std::size_t max_answer_length) {
  const SpanLogits logits = model.forward(ex.pair, route);
  SpanPrediction p = predict_span(logits.start, logits.end, ex.pair.context_mask, max_answer_length);
  p.start -= ex.pair.context_offset;
  p.end -= ex.pair.context_offset;
  p.text = detokenize(ex.example.context_tokens, p.start, p.end);
  return p;
}

namespace {

const std::vector<std::string>& golds_of(const QAExample& ex) {
  static thread_local std::vector<std::string> single;
  if (!ex.gold_answers.empty()) return ex.gold_answers;
  single.assign(1, ex.answer_text);
  return single;
}

/// Sum after sorting so the total is independent of input order.
double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace

DomainScore evaluate_domain(const QAModel& model, std::span<const EncodedExample> examples, const Route& route,
                            std::size_t max_answer_length) {
  DomainScore out;
  if (examples.empty()) return out;
  long em = 0;
  std::vector<double> f1;
  f1.reserve(examples.size());
  for (const auto& ex : examples) {
    const SpanPrediction p = predict(model, ex, route, max_answer_length);
    const auto& golds = golds_of(ex.example);
    em += em_max(p.text, golds);
    f1.push_back(f1_max(p.text, golds));
  }
  const auto n = static_cast<double>(examples.size());
  out.em = 100.0 * static_cast<double>(em) / n;
  out.f1 = 100.0 * ordered_sum(std::move(f1)) / n;
  return out;
}

void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j = {{"id", r.id}, {"text", r.text}, {"start", r.start}, {"end", r.end}, {"score", r.score}};
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_predictions(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(), j.at("start").get<std::size_t>(),
                     j.at("end").get<std::size_t>(), j.at("score").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

DomainScore score_predictions(const std::vector<PredictionRecord>& predictions, const std::vector<QAExample>& gold) {
  DomainScore out;
  if (gold.empty()) return out;
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : predictions) by_id[p.id] = &p;
  long em = 0;
  std::vector<double> f1;
  for (const auto& ex : gold) {
    auto it = by_id.find(ex.id);
    const std::string text = it == by_id.end() ? std::string() : it->second->text;
    em += em_max(text, golds_of(ex));
    f1.push_back(f1_max(text, golds_of(ex)));
  }
  const auto n = static_cast<double>(gold.size());
  out.em = 100.0 * static_cast<double>(em) / n;
  out.f1 = 100.0 * ordered_sum(std::move(f1)) / n;
  return out;
}

}  // namespace cda
