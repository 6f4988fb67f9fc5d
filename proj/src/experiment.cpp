#include "cda/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cda/error.hpp"
#include "json.hpp"

namespace cda {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_field(const json& j, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

AdapterConfig parse_adapter(const json& j) {
  check_keys(j, {"structure", "insertion", "d_s", "pal_heads"}, "adapter");
  AdapterConfig a;
  std::string s = to_string(a.structure), i = to_string(a.insertion);
  read_field(j, "structure", s);
  read_field(j, "insertion", i);
  a.structure = parse_structure(s);
  a.insertion = parse_insertion(i);
  read_field(j, "d_s", a.d_s);
  read_field(j, "pal_heads", a.pal_heads);
  return a;
}

StrategyConfig parse_strategy_entry(const json& j) {
  StrategyConfig s;
  if (j.is_string()) {
    s.kind = parse_strategy(j.get<std::string>());
    return s;
  }
  check_keys(j, {"kind", "lambda", "adapter", "init_from_prev"}, "strategy");
  std::string kind;
  read_field(j, "kind", kind);
  s.kind = parse_strategy(kind);
  read_field(j, "lambda", s.lambda);
  read_field(j, "init_from_prev", s.init_from_prev);
  if (j.contains("adapter") && !j.at("adapter").is_null()) s.adapter = parse_adapter(j.at("adapter"));
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

bool is_policy(const std::string& s) { return s == "given" || s == "ascending" || s == "descending"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string unique_label(std::string label, std::set<std::string>& used) {
  std::string candidate = label;
  for (int n = 2; !used.insert(candidate).second; ++n) candidate = label + "_" + std::to_string(n);
  return candidate;
}

AdapterConfig prog_adapter(const ExperimentSpec& spec) {
  for (const auto& s : spec.strategies)
    if (s.kind == StrategyKind::kProg && s.adapter) return *s.adapter;
  AdapterConfig a;
  a.d = spec.model.d;
  return a;
}

ExperimentSpec finalized(ExperimentSpec spec) {
  spec.finalize();
  return spec;
}

std::vector<std::string> domain_names(const PreparedData& prep) {
  std::vector<std::string> names;
  for (const auto& d : prep.domains) names.push_back(d.name);
  return names;
}

}  // namespace

void ExperimentSpec::finalize() {
  if (mode != "synthetic" && mode != "cda-c" && mode != "cda-q")
    throw ConfigError("unknown mode '" + mode + "' (expected synthetic, cda-c or cda-q)");
  if (data.empty()) throw ConfigError("no data source given");
  if (order.empty()) throw ConfigError("domain order must not be empty");
  if (strategies.empty()) strategies.push_back(StrategyConfig{});
  for (auto& s : strategies) {
    if (s.kind == StrategyKind::kProg && !s.adapter) s.adapter = AdapterConfig{};
    if (s.adapter) s.adapter->d = model.d;
    s.validate();
  }
  train.validate();
  model.vocab_size = std::max<std::size_t>(model.vocab_size, 4);
  model.validate();
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  if (data == "synthetic") {
    if (synthetic.n_domains < 1 || synthetic.n_train < 1 || synthetic.n_test < 1)
      throw ConfigError("synthetic data needs at least one domain, training and test example");
  }
}

ExperimentSpec parse_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"data", "mode", "synthetic", "order", "strategies", "train", "model", "min_count", "out"}, "config");
  ExperimentSpec spec;
  read_field(j, "data", spec.data);
  read_field(j, "mode", spec.mode);
  read_field(j, "min_count", spec.min_count);
  if (j.contains("out")) spec.out = j.at("out").get<std::string>();
  if (j.contains("order")) {
    const auto& o = j.at("order");
    if (o.is_string()) {
      spec.order = split_list(o.get<std::string>());
    } else {
      spec.order.clear();
      read_field(j, "order", spec.order);
    }
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    check_keys(s, {"n_domains", "n_train", "n_test", "slots", "min_phrase", "max_phrase", "max_lead", "word_pool",
                   "domain_flavor"},
               "synthetic");
    auto& c = spec.synthetic;
    read_field(s, "n_domains", c.n_domains);
    read_field(s, "n_train", c.n_train);
    read_field(s, "n_test", c.n_test);
    read_field(s, "slots", c.slots);
    read_field(s, "min_phrase", c.min_phrase);
    read_field(s, "max_phrase", c.max_phrase);
    read_field(s, "max_lead", c.max_lead);
    read_field(s, "word_pool", c.word_pool);
    read_field(s, "domain_flavor", c.domain_flavor);
  }
  if (j.contains("strategies")) {
    const auto& arr = j.at("strategies");
    if (!arr.is_array()) throw ConfigError("strategies must be an array");
    for (const auto& e : arr) spec.strategies.push_back(parse_strategy_entry(e));
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"learning_rate", "epochs", "batch_size", "warmup_fraction", "seed", "max_answer_length",
                "fisher_samples", "optimizer"},
               "train");
    auto& c = spec.train;
    read_field(t, "learning_rate", c.learning_rate);
    read_field(t, "epochs", c.epochs);
    read_field(t, "batch_size", c.batch_size);
    read_field(t, "warmup_fraction", c.warmup_fraction);
    read_field(t, "seed", c.seed);
    read_field(t, "max_answer_length", c.max_answer_length);
    read_field(t, "fisher_samples", c.fisher_samples);
    std::string opt = "adam";
    read_field(t, "optimizer", opt);
    if (opt != "adam") throw ConfigError("unsupported optimizer '" + opt + "'");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"d", "n_heads", "d_ff", "n_layers", "max_len", "dropout"}, "model");
    auto& c = spec.model;
    read_field(m, "d", c.d);
    read_field(m, "n_heads", c.n_heads);
    read_field(m, "d_ff", c.d_ff);
    read_field(m, "n_layers", c.n_layers);
    read_field(m, "max_len", c.max_len);
    read_field(m, "dropout", c.dropout);
  }
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str());
}

std::string spec_to_json(const ExperimentSpec& spec) {
  ojson strategies = ojson::array();
  for (const auto& s : spec.strategies) {
    ojson e = {{"kind", to_string(s.kind)}};
    if (s.kind == StrategyKind::kReg) e["lambda"] = s.lambda;
    if (s.adapter) {
      e["adapter"] = {{"structure", to_string(s.adapter->structure)},
                      {"insertion", to_string(s.adapter->insertion)},
                      {"d_s", s.adapter->d_s},
                      {"pal_heads", s.adapter->pal_heads}};
      e["init_from_prev"] = s.init_from_prev;
    }
    strategies.push_back(std::move(e));
  }
  const auto& c = spec.synthetic;
  const auto& t = spec.train;
  const auto& m = spec.model;
  ojson j = {{"data", spec.data}, {"mode", spec.mode}};
  if (spec.data == "synthetic") {
    j["synthetic"] = {{"n_domains", c.n_domains}, {"n_train", c.n_train},       {"n_test", c.n_test},
                      {"slots", c.slots},         {"min_phrase", c.min_phrase}, {"max_phrase", c.max_phrase},
                      {"max_lead", c.max_lead},   {"word_pool", c.word_pool},   {"domain_flavor", c.domain_flavor}};
  }
  j["order"] = spec.order;
  j["strategies"] = std::move(strategies);
  j["train"] = {{"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"warmup_fraction", t.warmup_fraction},
                {"seed", t.seed},
                {"max_answer_length", t.max_answer_length},
                {"fisher_samples", t.fisher_samples},
                {"optimizer", "adam"}};
  j["model"] = {{"d", m.d},           {"n_heads", m.n_heads}, {"d_ff", m.d_ff},
                {"n_layers", m.n_layers}, {"max_len", m.max_len}, {"dropout", m.dropout}};
  j["min_count"] = spec.min_count;
  return j.dump(2);
}

std::string config_hash(const ExperimentSpec& spec) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : spec_to_json(spec)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void SpecOverrides::apply(ExperimentSpec& spec) const {
  if (data) spec.data = *data;
  if (mode) spec.mode = *mode;
  if (order) spec.order = split_list(*order);
  if (!strategies.empty()) {
    spec.strategies.clear();
    for (const auto& s : strategies) {
      StrategyConfig c;
      c.kind = parse_strategy(s);
      spec.strategies.push_back(c);
    }
  }
  for (auto& s : spec.strategies) {
    if (s.kind == StrategyKind::kReg && lambda) s.lambda = *lambda;
    if (s.kind != StrategyKind::kProg) continue;
    if (!s.adapter) s.adapter = AdapterConfig{};
    if (adapter_structure) s.adapter->structure = parse_structure(*adapter_structure);
    if (adapter_insertion) s.adapter->insertion = parse_insertion(*adapter_insertion);
    if (adapter_dim) s.adapter->d_s = *adapter_dim;
    if (no_adapter_init) s.init_from_prev = false;
  }
  if (lr) spec.train.learning_rate = *lr;
  if (epochs) spec.train.epochs = *epochs;
  if (batch_size) spec.train.batch_size = *batch_size;
  if (seed) spec.train.seed = *seed;
  if (out) spec.out = *out;
}

std::filesystem::path default_out_dir() {
  const char* env = std::getenv("CDA_OUT_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::vector<DomainData> order_domains(std::vector<DomainData> domains, const std::vector<std::string>& order) {
  if (order.size() == 1 && is_policy(order[0])) {
    const std::string& p = order[0];
    if (p == "ascending") {
      std::stable_sort(domains.begin(), domains.end(),
                       [](const DomainData& a, const DomainData& b) { return a.train.size() < b.train.size(); });
    } else if (p == "descending") {
      std::stable_sort(domains.begin(), domains.end(),
                       [](const DomainData& a, const DomainData& b) { return a.train.size() > b.train.size(); });
    }
    return domains;
  }
  std::vector<DomainData> out;
  std::set<std::string> used;
  for (const auto& name : order) {
    if (!used.insert(name).second) throw ConfigError("domain '" + name + "' listed twice in the order");
    auto it = std::find_if(domains.begin(), domains.end(), [&](const DomainData& d) { return d.name == name; });
    if (it == domains.end()) throw ConfigError("order names unknown domain '" + name + "'");
    out.push_back(std::move(*it));
  }
  return out;
}

PreparedData prepare_data(const ExperimentSpec& spec, const std::vector<std::string>& order) {
  std::vector<DomainData> domains = spec.data == "synthetic"
                                        ? make_synthetic_cda(spec.synthetic, derive_seed(spec.train.seed, "data"))
                                        : read_domains(spec.data);
  if (domains.empty()) throw DataError("no domains found in " + spec.data);
  domains = order_domains(std::move(domains), order);
  PreparedData prep;
  prep.vocab = Vocabulary::build(domains, spec.min_count);
  prep.encoder = spec.model;
  prep.encoder.vocab_size = prep.vocab.size();
  prep.encoder.validate();
  for (const auto& d : domains) {
    prep.domains.push_back(encode_domain(d, prep.vocab, prep.encoder.max_len));
    prep.train_sizes.push_back(d.train.size());
    prep.dropped += prep.domains.back().dropped;
  }
  return prep;
}

RunBundle cmd_run(const ExperimentSpec& input) {
  const ExperimentSpec spec = finalized(input);
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedData prep = prepare_data(spec);
  RunBundle bundle;
  bundle.config_hash = config_hash(spec);
  std::set<std::string> used;
  for (const auto& s : spec.strategies) {
    bundle.runs.push_back({unique_label(s.label(), used), run_sequence(prep.domains, prep.encoder, s, spec.train)});
  }
  bundle.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (spec.out.empty()) return bundle;

  std::filesystem::create_directories(spec.out);
  ojson report = {{"config", ojson::parse(spec_to_json(spec))},
                  {"config_hash", bundle.config_hash},
                  {"domains", domain_names(prep)},
                  {"train_sizes", prep.train_sizes},
                  {"dropped_too_long", prep.dropped}};
  ojson runs = ojson::array();
  for (const auto& r : bundle.runs) {
    runs.push_back({{"label", r.label},
                    {"param_count", r.result.param_count},
                    {"matrix", ojson::parse(r.result.matrix.to_json_string())}});
    std::ostringstream csv, log;
    r.result.matrix.write_csv(csv);
    write_log_jsonl(log, r.result.log);
    write_text(spec.out / (r.label + ".csv"), csv.str());
    write_text(spec.out / (r.label + ".log.jsonl"), log.str());
  }
  report["strategies"] = std::move(runs);
  write_text(spec.out / "report.json", report.dump(2) + "\n");
  write_text(spec.out / "timing.json", ojson({{"wall_seconds", bundle.wall_seconds}}).dump(2) + "\n");
  return bundle;
}

std::vector<CurvePoint> cmd_forgetting_curve(const ExperimentSpec& input, std::size_t tracked) {
  const ExperimentSpec spec = finalized(input);
  const PreparedData prep = prepare_data(spec);
  if (tracked >= prep.domains.size())
    throw ConfigError("tracked domain " + std::to_string(tracked + 1) + " is beyond the " +
                      std::to_string(prep.domains.size()) + " domains");
  const std::span<const EncodedExample> test(prep.domains[tracked].test);
  std::vector<CurvePoint> points;
  std::set<std::string> used;
  for (const auto& s : spec.strategies) {
    const std::string label = unique_label(s.label(), used);
    const auto epochs = static_cast<double>(spec.train.epochs);
    run_sequence(prep.domains, prep.encoder, s, spec.train,
                 [&](const ContinualLearner& l, std::size_t domain, std::size_t epoch) {
                   if (domain < tracked) return;
                   const double f1 = l.evaluate(tracked, test).f1;
                   points.push_back({label, domain + 1, epoch + 1,
                                     static_cast<double>(domain) + static_cast<double>(epoch + 1) / epochs, f1});
                 });
  }
  if (!spec.out.empty()) {
    std::filesystem::create_directories(spec.out);
    std::ostringstream csv;
    csv << "strategy,step,epoch,progress,f1\n";
    for (const auto& p : points)
      csv << p.strategy << ',' << p.step << ',' << p.epoch << ',' << format_double(p.progress) << ','
          << format_double(p.f1) << '\n';
    write_text(spec.out / "forgetting_curve.csv", csv.str());
  }
  return points;
}

std::vector<TransferRow> cmd_forward_transfer(const ExperimentSpec& input) {
  ExperimentSpec spec = finalized(input);
  StrategyConfig prog;
  prog.kind = StrategyKind::kProg;
  prog.adapter = prog_adapter(spec);
  StrategyConfig noinit = prog;
  noinit.init_from_prev = false;
  StrategyConfig individual;
  individual.kind = StrategyKind::kIndividual;
  spec.strategies = {prog, noinit, individual};

  const PreparedData prep = prepare_data(spec);
  std::vector<TransferRow> rows;
  for (const auto& s : spec.strategies) {
    const SequenceResult r = run_sequence(prep.domains, prep.encoder, s, spec.train);
    TransferRow row{s.label(), {}, 0.0};
    for (std::size_t k = 0; k < r.matrix.steps(); ++k) {
      row.f1.push_back(r.matrix.cell(k, k)->f1);
      row.overall += row.f1.back();
    }
    rows.push_back(std::move(row));
  }
  if (!spec.out.empty()) {
    std::filesystem::create_directories(spec.out);
    const auto names = domain_names(prep);
    std::ostringstream csv;
    csv << "strategy,domain,f1\n";
    for (const auto& r : rows) {
      for (std::size_t k = 0; k < r.f1.size(); ++k) csv << r.strategy << ',' << names[k] << ',' << format_double(r.f1[k]) << '\n';
      csv << r.strategy << ",overall," << format_double(r.overall) << '\n';
    }
    write_text(spec.out / "forward_transfer.csv", csv.str());
  }
  return rows;
}

std::vector<OrderRow> cmd_order_robustness(const ExperimentSpec& input, const std::vector<std::string>& orders) {
  const ExperimentSpec spec = finalized(input);
  if (orders.empty()) throw ConfigError("order robustness needs at least one order");
  std::vector<OrderRow> rows;
  for (const auto& o : orders) {
    const PreparedData prep = prepare_data(spec, split_list(o));
    const auto names = domain_names(prep);
    std::set<std::string> used;
    for (const auto& s : spec.strategies) {
      const SequenceResult r = run_sequence(prep.domains, prep.encoder, s, spec.train);
      rows.push_back({o, names, unique_label(s.label(), used), r.matrix.overall(r.matrix.steps() - 1)});
    }
  }
  if (!spec.out.empty()) {
    std::filesystem::create_directories(spec.out);
    std::ostringstream csv;
    csv << "order,domains,strategy,overall\n";
    for (const auto& r : rows) {
      std::string seq;
      for (const auto& n : r.domains) seq += (seq.empty() ? "" : ">") + n;
      csv << '"' << r.order << "\"," << seq << ',' << r.strategy << ',' << format_double(r.overall) << '\n';
    }
    write_text(spec.out / "order_robustness.csv", csv.str());
  }
  return rows;
}

std::size_t scale_adapter_width(std::size_t reference, std::size_t d, const AdapterConfig& cfg) {
  const double scaled = std::round(static_cast<double>(reference) * static_cast<double>(d) / 768.0);
  auto ds = std::max<std::size_t>(4, static_cast<std::size_t>(scaled));
  if (cfg.structure == AdapterStructure::kPal && cfg.pal_heads > 1) ds = (ds + cfg.pal_heads - 1) / cfg.pal_heads * cfg.pal_heads;
  return ds;
}

std::vector<SweepRow> cmd_adapter_sweep(const ExperimentSpec& input, const std::vector<std::size_t>& sizes) {
  const ExperimentSpec spec = finalized(input);
  if (sizes.empty()) throw ConfigError("adapter sweep needs at least one size");
  const PreparedData prep = prepare_data(spec);
  StrategyConfig prog;
  prog.kind = StrategyKind::kProg;
  prog.adapter = prog_adapter(spec);
  for (const auto& s : spec.strategies)
    if (s.kind == StrategyKind::kProg) prog.init_from_prev = s.init_from_prev;
  std::vector<SweepRow> rows;
  for (std::size_t ref : sizes) {
    StrategyConfig s = prog;
    s.adapter->d_s = scale_adapter_width(ref, prep.encoder.d, *s.adapter);
    s.validate();
    const SequenceResult r = run_sequence(prep.domains, prep.encoder, s, spec.train);
    SweepRow row{ref, s.adapter->d_s, {}, 0.0, prep.encoder.n_layers * 2 * (adapter_param_count(*s.adapter) + adapter_bias_count(*s.adapter))};
    for (const auto& c : r.matrix.row(r.matrix.steps() - 1)) row.f1.push_back(c.f1);
    row.overall = r.matrix.overall(r.matrix.steps() - 1);
    rows.push_back(std::move(row));
  }
  if (!spec.out.empty()) {
    std::filesystem::create_directories(spec.out);
    const auto names = domain_names(prep);
    std::ostringstream csv;
    csv << "reference,d_s,adapter_params,domain,f1\n";
    for (const auto& r : rows) {
      const std::string lead = std::to_string(r.reference) + ',' + std::to_string(r.d_s) + ',' + std::to_string(r.adapter_params) + ',';
      for (std::size_t k = 0; k < r.f1.size(); ++k) csv << lead << names[k] << ',' << format_double(r.f1[k]) << '\n';
      csv << lead << "overall," << format_double(r.overall) << '\n';
    }
    write_text(spec.out / "adapter_sweep.csv", csv.str());
  }
  return rows;
}

SplitSummary cmd_split(const SplitOptions& opts) {
  if (opts.out.empty()) throw ConfigError("split needs an output directory");
  if (opts.inputs.empty()) throw ConfigError("split needs at least one input file");
  SplitSummary summary;
  BuildStats stats;
  if (opts.mode == "cda-q") {
    if (opts.inputs.size() > 2) throw ConfigError("cda-q takes a training file and an optional test file");
    if (!(opts.test_fraction > 0.0 && opts.test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
    const LoadResult train = load_jsonl(opts.inputs[0]);
    summary.skipped_missing_spans += train.skipped_missing_spans;
    std::optional<LoadResult> test;
    if (opts.inputs.size() == 2) {
      test = load_jsonl(opts.inputs[1]);
      summary.skipped_missing_spans += test->skipped_missing_spans;
    }
    summary.domains = build_cda_q(train.records, test ? &test->records : nullptr, opts.test_fraction, opts.seed, &stats);
  } else if (opts.mode == "cda-c") {
    std::vector<TaggedCollection> collections;
    for (const auto& entry : opts.inputs) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("expected tag=train.jsonl,test.jsonl, got '" + entry + "'");
      const std::string tag = entry.substr(0, eq);
      const auto files = split_list(entry.substr(eq + 1));
      if (files.size() != 2) throw ConfigError("collection '" + tag + "' needs a training and a test file");
      TaggedCollection c{tag, {}, {}};
      LoadResult tr = load_jsonl(files[0], tag);
      LoadResult te = load_jsonl(files[1], tag);
      summary.skipped_missing_spans += tr.skipped_missing_spans + te.skipped_missing_spans;
      c.train = std::move(tr.records);
      c.test = std::move(te.records);
      collections.push_back(std::move(c));
    }
    summary.domains = build_cda_c(collections, opts.n_train, opts.n_test, opts.seed, &stats);
  } else {
    throw ConfigError("unknown split mode '" + opts.mode + "' (expected cda-q or cda-c)");
  }
  summary.dropped_alignment = stats.dropped_alignment;
  write_domains(opts.out, opts.mode, summary.domains);
  return summary;
}

std::vector<std::filesystem::path> cmd_report(const std::filesystem::path& dir, const std::string& format) {
  if (format != "csv" && format != "text") throw ConfigError("unknown report format '" + format + "'");
  std::ifstream in(dir / "report.json");
  if (!in) throw DataError("no report.json in " + dir.string());
  json report;
  try {
    report = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError((dir / "report.json").string() + ": " + e.what());
  }
  std::vector<std::filesystem::path> written;
  std::ostringstream text;
  try {
    for (const auto& run : report.at("strategies")) {
      const std::string label = run.at("label").get<std::string>();
      const auto& m = run.at("matrix");
      ResultsMatrix matrix(m.at("domains").get<std::vector<std::string>>());
      for (const auto& row : m.at("rows")) {
        std::vector<DomainScore> cells;
        for (const auto& c : row.at("cells")) cells.push_back({c.at("em").get<double>(), c.at("f1").get<double>()});
        matrix.add_row(std::move(cells));
      }
      if (format == "csv") {
        std::ostringstream csv;
        matrix.write_csv(csv);
        written.push_back(dir / (label + ".csv"));
        write_text(written.back(), csv.str());
        continue;
      }
      text << label << "\n";
      text << "step";
      for (std::size_t k = 0; k < matrix.steps(); ++k) text << " | " << matrix.domains()[k];
      text << " | overall\n";
      char buf[64];
      for (std::size_t s = 0; s < matrix.steps(); ++s) {
        text << s + 1;
        for (std::size_t k = 0; k < matrix.steps(); ++k) {
          const auto c = matrix.cell(s, k);
          if (!c) {
            text << " | -";
            continue;
          }
          std::snprintf(buf, sizeof buf, "%.2f", c->f1);
          text << " | " << buf;
          if (const auto rc = matrix.rel_change(s, k)) {
            std::snprintf(buf, sizeof buf, " (%+.1f%%)", *rc);
            text << buf;
          }
        }
        std::snprintf(buf, sizeof buf, "%.2f", matrix.overall(s));
        text << " | " << buf << "\n";
      }
      text << "\n";
    }
  } catch (const json::exception& e) {
    throw DataError((dir / "report.json").string() + ": " + e.what());
  }
  if (format == "text") {
    written.push_back(dir / "report.txt");
    write_text(written.back(), text.str());
  }
  return written;
}

}  // namespace cda
