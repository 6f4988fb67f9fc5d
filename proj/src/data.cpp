#include "cda/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>

#include "cda/error.hpp"
#include "cda/metrics.hpp"
#include "cda/rng.hpp"
#include "json.hpp"

namespace cda {

using nlohmann::json;

namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

// ---------------------------------------------------------------------------
// Tokenization

std::vector<Token> tokenize_with_offsets(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    // chunk [i, j): leading punctuation, core, trailing punctuation
    std::size_t a = i, b = j;
    while (a < b && is_ascii_punct(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && is_ascii_punct(static_cast<unsigned char>(text[b - 1]))) --b;
    for (std::size_t k = i; k < a; ++k) out.push_back({std::string(1, text[k]), k, k + 1});
    if (a < b) {
      std::string core(text.substr(a, b - a));
      for (char& c : core) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80) c = static_cast<char>(std::tolower(u));
      }
      out.push_back({std::move(core), a, b});
    }
    for (std::size_t k = b; k < j; ++k) out.push_back({std::string(1, text[k]), k, k + 1});
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.text));
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens, std::size_t first, std::size_t last) {
  std::string out;
  for (std::size_t i = first; i <= last && i < tokens.size(); ++i) {
    if (i != first) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool is_word(std::string_view token) {
  return std::any_of(token.begin(), token.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u);
  });
}

// ---------------------------------------------------------------------------
// Alignment

std::optional<std::pair<std::size_t, std::size_t>> align_char_span(const std::vector<Token>& tokens,
                                                                   std::size_t char_begin, std::size_t char_end) {
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool overlaps = tokens[i].end > char_begin && tokens[i].begin <= char_end;
    if (!overlaps) continue;
    if (!first) first = i;
    last = i;
  }
  if (!first) return std::nullopt;
  return std::make_pair(*first, *last);
}

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80) c = static_cast<char>(std::tolower(u));
  }
  return out;
}

/// Earliest occurrence of the answer text in the context, case-insensitively.
std::optional<std::pair<std::size_t, std::size_t>> find_answer(const std::string& context, const std::string& text) {
  if (text.empty()) return std::nullopt;
  auto pos = context.find(text);
  if (pos == std::string::npos) pos = lower_ascii(context).find(lower_ascii(text));
  if (pos == std::string::npos) return std::nullopt;
  return std::make_pair(pos, pos + text.size() - 1);
}

}  // namespace

std::optional<QAExample> make_example(const RawRecord& record, const std::string& domain) {
  const auto ctx_tokens = tokenize_with_offsets(record.context);
  QAExample ex;
  ex.id = record.id;
  ex.question_text = record.question;
  ex.context_text = record.context;
  ex.question_tokens = tokenize(record.question);
  for (const auto& t : ctx_tokens) {
    ex.context_tokens.push_back(t.text);
    ex.context_offsets.push_back(t.begin);
  }
  ex.domain = domain;
  for (const auto& a : record.answers) {
    if (std::find(ex.gold_answers.begin(), ex.gold_answers.end(), a.text) == ex.gold_answers.end())
      ex.gold_answers.push_back(a.text);
  }
  for (const auto& a : record.answers) {
    const auto span = a.char_span ? a.char_span : find_answer(record.context, a.text);
    if (!span || span->second >= record.context.size() || span->first > span->second) continue;
    const auto tok = align_char_span(ctx_tokens, span->first, span->second);
    if (!tok) continue;
    const std::string norm = normalize_answer(a.text);
    if (norm.empty() || normalize_answer(detokenize(ex.context_tokens, tok->first, tok->second)) != norm) continue;
    ex.answer_text = a.text;
    ex.start = tok->first;
    ex.end = tok->second;
    return ex;
  }
  return std::nullopt;
}

const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

// ---------------------------------------------------------------------------
// MRQA IO

namespace {

std::optional<std::pair<std::size_t, std::size_t>> first_pair(const json& spans) {
  if (!spans.is_array() || spans.empty()) return std::nullopt;
  const auto& s = spans[0];
  if (!s.is_array() || s.size() != 2) return std::nullopt;
  return std::make_pair(s[0].get<std::size_t>(), s[1].get<std::size_t>());
}

}  // namespace

LoadResult parse_jsonl(std::istream& in, const std::string& source_tag, const std::string& origin) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw DataError(origin + ":" + std::to_string(line_no) + ": expected an object");
    if (obj.contains("header")) {
      const auto& h = obj["header"];
      if (h.is_object() && h.contains("dataset") && h["dataset"].is_string())
        result.header_dataset = h["dataset"].get<std::string>();
      continue;
    }
    try {
      const std::string context = obj.at("context").get<std::string>();
      // (token, char offset) pairs, used to translate token spans.
      std::vector<std::pair<std::string, std::size_t>> ctx_tokens;
      if (obj.contains("context_tokens")) {
        for (const auto& t : obj["context_tokens"]) ctx_tokens.emplace_back(t[0].get<std::string>(), t[1].get<std::size_t>());
      }
      for (const auto& qa : obj.at("qas")) {
        RawRecord rec;
        rec.context = context;
        rec.question = qa.at("question").get<std::string>();
        rec.id = qa.contains("qid") ? qa["qid"].get<std::string>() : qa.value("id", std::string());
        rec.source_tag = !source_tag.empty() ? source_tag : result.header_dataset.value_or("");
        if (qa.contains("detected_answers")) {
          for (const auto& da : qa["detected_answers"]) {
            AnswerSpan a;
            a.text = da.at("text").get<std::string>();
            if (da.contains("char_spans")) {
              a.char_span = first_pair(da["char_spans"]);
            } else if (da.contains("token_spans")) {
              const auto ts = first_pair(da["token_spans"]);
              if (ts && ts->second < ctx_tokens.size() && ts->first <= ts->second) {
                const auto& last = ctx_tokens[ts->second];
                a.char_span = std::make_pair(ctx_tokens[ts->first].second, last.second + last.first.size() - 1);
              }
            }
            if (a.char_span) rec.answers.push_back(std::move(a));
          }
        }
        if (rec.answers.empty()) {
          ++result.skipped_missing_spans;
          continue;
        }
        // Extra gold strings count for scoring even without spans.
        if (qa.contains("answers") && qa["answers"].is_array()) {
          for (const auto& g : qa["answers"]) {
            if (!g.is_string()) continue;
            const auto text = g.get<std::string>();
            const bool known = std::any_of(rec.answers.begin(), rec.answers.end(),
                                           [&text](const AnswerSpan& a) { return a.text == text; });
            if (!known) rec.answers.push_back({text, std::nullopt});
          }
        }
        result.records.push_back(std::move(rec));
      }
    } catch (const json::exception& e) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return result;
}

LoadResult load_jsonl(const std::filesystem::path& path, const std::string& source_tag) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_jsonl(in, source_tag, path.string());
}

void write_domain_file(const std::filesystem::path& path, const std::string& domain, Split split,
                       const std::vector<QAExample>& examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  json header = {{"header", {{"dataset", domain}, {"domain", domain}, {"split", to_string(split)},
                             {"count", examples.size()}}}};
  out << header.dump() << '\n';
  for (const auto& ex : examples) {
    json tokens = json::array();
    for (std::size_t i = 0; i < ex.context_tokens.size(); ++i)
      tokens.push_back(json::array({ex.context_tokens[i], ex.context_offsets[i]}));
    const std::size_t cb = ex.context_offsets[ex.start];
    // The aligned span ends where the last answer token ends in the raw text.
    const auto raw_tokens = tokenize_with_offsets(ex.context_text);
    const std::size_t ce = raw_tokens[ex.end].end - 1;
    json answers = json::array();
    for (const auto& g : ex.gold_answers) answers.push_back(g);
    json qa = {{"qid", ex.id},
               {"question", ex.question_text},
               {"answers", answers},
               {"detected_answers",
                json::array({{{"text", ex.answer_text},
                              {"char_spans", json::array({json::array({cb, ce})})},
                              {"token_spans", json::array({json::array({ex.start, ex.end})})}}})}};
    json line = {{"id", ex.id}, {"context", ex.context_text}, {"context_tokens", tokens}, {"qas", json::array({qa})}};
    out << line.dump() << '\n';
  }
}

std::vector<QAExample> read_domain_file(const std::filesystem::path& path, std::size_t* dropped) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string first;
  std::string domain;
  if (std::getline(in, first)) {
    try {
      const json h = json::parse(first);
      if (h.contains("header")) domain = h["header"].value("domain", std::string());
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":1: malformed JSON: " + e.what());
    }
  }
  if (domain.empty()) throw DataError(path.string() + ": missing domain header line");
  in.clear();
  in.seekg(0);
  const LoadResult lr = parse_jsonl(in, domain, path.string());
  std::vector<QAExample> out;
  std::size_t bad = lr.skipped_missing_spans;
  for (const auto& r : lr.records) {
    if (auto ex = make_example(r, domain)) {
      out.push_back(std::move(*ex));
    } else {
      ++bad;
    }
  }
  if (dropped) *dropped = bad;
  return out;
}

void write_domains(const std::filesystem::path& dir, const std::string& mode, const std::vector<DomainData>& domains) {
  std::filesystem::create_directories(dir);
  json manifest = {{"mode", mode}, {"order", json::array()}, {"domains", json::array()}};
  for (const auto& d : domains) {
    const std::string train = d.name + ".train.jsonl";
    const std::string test = d.name + ".test.jsonl";
    write_domain_file(dir / train, d.name, Split::kTrain, d.train);
    write_domain_file(dir / test, d.name, Split::kTest, d.test);
    manifest["order"].push_back(d.name);
    manifest["domains"].push_back(
        {{"name", d.name}, {"train", train}, {"test", test}, {"n_train", d.train.size()}, {"n_test", d.test.size()}});
  }
  std::ofstream out(dir / "domains.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::vector<DomainData> read_domains(const std::filesystem::path& dir, DomainManifest* manifest) {
  std::ifstream in(dir / "domains.json");
  if (!in) throw DataError("no domains.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError((dir / "domains.json").string() + ": " + e.what());
  }
  std::vector<DomainData> out;
  DomainManifest man;
  man.mode = m.value("mode", std::string());
  try {
    for (const auto& d : m.at("domains")) {
      DomainData dd;
      dd.name = d.at("name").get<std::string>();
      dd.train = read_domain_file(dir / d.at("train").get<std::string>());
      dd.test = read_domain_file(dir / d.at("test").get<std::string>());
      man.order.push_back(dd.name);
      out.push_back(std::move(dd));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "domains.json").string() + ": " + e.what());
  }
  if (manifest) *manifest = man;
  return out;
}

// ---------------------------------------------------------------------------
// Domain construction

const std::vector<std::string>& question_domain_order() {
  static const std::vector<std::string> order = {"what", "which", "where", "when", "how", "why", "other", "who"};
  return order;
}

std::string question_type(std::string_view question) {
  static const std::set<std::string> kWords = {"what", "which", "where", "when", "how", "why", "who"};
  std::vector<std::string> words;
  for (auto& t : tokenize(question))
    if (is_word(t)) words.push_back(std::move(t));
  for (std::size_t i = 0; i < words.size() && i < 3; ++i)
    if (kWords.count(words[i])) return words[i];
  if (!words.empty() && kWords.count(words.back())) return words.back();
  return "other";
}

namespace {

/// Indices [0, n) in a seeded random order.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Without-replacement sample of k items, kept in source order.
template <class T>
std::vector<T> sample(const std::vector<T>& items, std::size_t k, std::uint64_t seed) {
  if (k >= items.size()) return items;
  auto idx = shuffled_indices(items.size(), seed);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

std::vector<QAExample> convert(const std::vector<RawRecord>& records, const std::string& domain, BuildStats* stats) {
  std::vector<QAExample> out;
  for (const auto& r : records) {
    if (auto ex = make_example(r, domain)) {
      out.push_back(std::move(*ex));
    } else if (stats) {
      ++stats->dropped_alignment;
    }
  }
  return out;
}

}  // namespace

std::vector<DomainData> build_cda_q(const std::vector<RawRecord>& train, const std::vector<RawRecord>* test,
                                    double test_fraction, std::uint64_t seed, BuildStats* stats) {
  if (test == nullptr && (test_fraction <= 0.0 || test_fraction >= 1.0))
    throw ConfigError("test fraction must lie in (0, 1) when no test split is provided");
  std::map<std::string, std::vector<RawRecord>> train_by, test_by;
  for (const auto& r : train) train_by[question_type(r.question)].push_back(r);
  if (test)
    for (const auto& r : *test) test_by[question_type(r.question)].push_back(r);
  std::vector<DomainData> out;
  for (const auto& name : question_domain_order()) {
    DomainData d;
    d.name = name;
    if (test) {
      d.train = convert(train_by[name], name, stats);
      d.test = convert(test_by[name], name, stats);
    } else {
      auto all = convert(train_by[name], name, stats);
      auto idx = shuffled_indices(all.size(), derive_seed(seed, name));
      const auto n_test = static_cast<std::size_t>(static_cast<double>(all.size()) * test_fraction);
      std::vector<bool> is_test(all.size(), false);
      for (std::size_t i = 0; i < n_test; ++i) is_test[idx[i]] = true;
      for (std::size_t i = 0; i < all.size(); ++i) (is_test[i] ? d.test : d.train).push_back(std::move(all[i]));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<DomainData> build_cda_c(const std::vector<TaggedCollection>& collections, std::size_t n_train,
                                    std::size_t n_test, std::uint64_t seed, BuildStats* stats) {
  std::vector<DomainData> out;
  for (const auto& c : collections) {
    DomainData d;
    d.name = c.tag;
    d.train = sample(convert(c.train, c.tag, stats), n_train, derive_seed(derive_seed(seed, c.tag), "train"));
    auto test = convert(c.test, c.tag, stats);
    d.test = n_test == 0 ? std::move(test) : sample(test, n_test, derive_seed(derive_seed(seed, c.tag), "test"));
    out.push_back(std::move(d));
  }
  return out;
}

DatasetStats dataset_stats(const std::vector<QAExample>& examples) {
  DatasetStats s;
  s.count = examples.size();
  if (examples.empty()) return s;
  auto words = [](const std::vector<std::string>& toks) {
    return static_cast<double>(std::count_if(toks.begin(), toks.end(), [](const auto& t) { return is_word(t); }));
  };
  double q = 0, a = 0, c = 0;
  for (const auto& ex : examples) {
    q += words(ex.question_tokens);
    a += words(tokenize(ex.answer_text));
    c += words(ex.context_tokens);
  }
  const auto n = static_cast<double>(examples.size());
  s.mean_question_words = q / n;
  s.mean_answer_words = a / n;
  s.mean_context_words = c / n;
  return s;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<DomainData>& domains, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : domains) {
    for (const auto& ex : d.train) {
      for (const auto& t : ex.question_tokens) ++counts[t];
      for (const auto& t : ex.context_tokens) ++counts[t];
    }
  }
  Vocabulary v;
  for (const auto& [tok, n] : counts) {
    if (n < min_count || v.ids_.count(tok)) continue;
    v.ids_[tok] = v.tokens_.size();
    v.tokens_.push_back(tok);
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

// ---------------------------------------------------------------------------
// Synthetic domains

namespace {

const std::vector<std::string>& slot_markers() {
  static const std::vector<std::string> m = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"};
  return m;
}

const std::vector<std::string>& question_templates() {
  static const std::vector<std::string> t = {"what is the item ?", "which item is it ?", "name the item .",
                                             "the item is what ?"};
  return t;
}

RawRecord synthetic_record(const SyntheticConfig& cfg, std::size_t domain, const std::string& id, Rng& rng) {
  std::string context;
  auto append = [&context](const std::string& w) {
    if (!context.empty()) context.push_back(' ');
    context += w;
  };
  if (cfg.domain_flavor) append("dom" + std::to_string(domain));
  const std::size_t lead = cfg.max_lead ? rng.below(cfg.max_lead + 1) : 0;
  for (std::size_t i = 0; i < lead; ++i) append("f" + std::to_string(rng.below(10)));
  const std::size_t answer_slot = domain % cfg.slots;
  std::pair<std::size_t, std::size_t> span{0, 0};
  std::string answer;
  for (std::size_t s = 0; s < cfg.slots; ++s) {
    append(slot_markers()[s]);
    const std::size_t len = cfg.min_phrase + rng.below(cfg.max_phrase - cfg.min_phrase + 1);
    std::string phrase;
    for (std::size_t w = 0; w < len; ++w) {
      if (!phrase.empty()) phrase.push_back(' ');
      phrase += "w" + std::to_string(rng.below(cfg.word_pool));
    }
    append(phrase);
    if (s == answer_slot) {
      answer = phrase;
      span = {context.size() - phrase.size(), context.size() - 1};
    }
    append(".");
  }
  RawRecord r;
  r.id = id;
  r.context = context;
  r.question = question_templates()[rng.below(question_templates().size())];
  r.answers.push_back({answer, span});
  r.source_tag = "syn" + std::to_string(domain);
  return r;
}

}  // namespace

std::vector<DomainData> make_synthetic_cda(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.slots == 0 || cfg.slots > slot_markers().size()) throw ConfigError("synthetic slots must be in [1, 8]");
  if (cfg.min_phrase == 0 || cfg.max_phrase < cfg.min_phrase) throw ConfigError("invalid synthetic phrase lengths");
  if (cfg.word_pool == 0) throw ConfigError("synthetic word pool must be nonempty");
  std::vector<DomainData> out;
  for (std::size_t k = 0; k < cfg.n_domains; ++k) {
    DomainData d;
    d.name = "syn" + std::to_string(k);
    const std::uint64_t ds = derive_seed(seed, k);
    Rng train_rng(derive_seed(ds, "train"));
    Rng test_rng(derive_seed(ds, "test"));
    for (std::size_t i = 0; i < cfg.n_train; ++i) {
      auto ex = make_example(synthetic_record(cfg, k, d.name + "-train-" + std::to_string(i), train_rng), d.name);
      if (!ex) throw InvariantViolation("synthetic example failed alignment");
      d.train.push_back(std::move(*ex));
    }
    for (std::size_t i = 0; i < cfg.n_test; ++i) {
      auto ex = make_example(synthetic_record(cfg, k, d.name + "-test-" + std::to_string(i), test_rng), d.name);
      if (!ex) throw InvariantViolation("synthetic example failed alignment");
      d.test.push_back(std::move(*ex));
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace cda
