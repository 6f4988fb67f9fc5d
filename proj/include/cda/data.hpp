#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cda {

// ---------------------------------------------------------------------------
// Tokenization

struct Token {
  std::string text;    // lowercased
  std::size_t begin;   // byte offset in the source text
  std::size_t end;     // one past the last byte
};

/// Lowercases, splits on whitespace, and peels leading/trailing ASCII
/// punctuation into one token per character. Internal punctuation stays.
std::vector<Token> tokenize_with_offsets(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens, std::size_t first, std::size_t last);
/// True when the token has at least one ASCII letter or digit, or any non-ASCII byte.
bool is_word(std::string_view token);

// ---------------------------------------------------------------------------
// Records and examples

struct AnswerSpan {
  std::string text;
  std::optional<std::pair<std::size_t, std::size_t>> char_span;  // inclusive byte offsets
};

struct RawRecord {
  std::string id;
  std::string context;
  std::string question;
  std::vector<AnswerSpan> answers;  // at least one
  std::string source_tag;
};

struct QAExample {
  std::string id;
  std::string question_text;
  std::string context_text;
  std::vector<std::string> question_tokens;
  std::vector<std::string> context_tokens;
  std::vector<std::size_t> context_offsets;  // byte offset of each context token
  std::string answer_text;                   // the aligned gold answer
  std::vector<std::string> gold_answers;     // every gold text; scoring takes the max
  std::size_t start = 0;                     // inclusive token span into context_tokens
  std::size_t end = 0;
  std::string domain;
};

/// Builds an example by aligning the first answer whose char span maps to a
/// token span that normalizes to the answer text. Returns nullopt otherwise.
std::optional<QAExample> make_example(const RawRecord& record, const std::string& domain);

/// Inclusive token span covering the char span by maximal overlap; earliest on ties.
std::optional<std::pair<std::size_t, std::size_t>> align_char_span(const std::vector<Token>& tokens,
                                                                   std::size_t char_begin, std::size_t char_end);

enum class Split { kTrain, kTest };
const char* to_string(Split s);

struct DomainData {
  std::string name;
  std::vector<QAExample> train;
  std::vector<QAExample> test;
};

// ---------------------------------------------------------------------------
// MRQA line format

struct LoadResult {
  std::vector<RawRecord> records;
  std::size_t skipped_missing_spans = 0;
  std::optional<std::string> header_dataset;  // "dataset" field of a header line, when present
};

/// Reads one context object with nested qas per line. Header lines are skipped.
/// Malformed lines raise DataError naming the line number.
LoadResult load_jsonl(const std::filesystem::path& path, const std::string& source_tag = "");
LoadResult parse_jsonl(std::istream& in, const std::string& source_tag, const std::string& origin);

/// Writes examples in the same format, preceded by a domain header line.
void write_domain_file(const std::filesystem::path& path, const std::string& domain, Split split,
                       const std::vector<QAExample>& examples);
/// Reads a file produced by write_domain_file.
std::vector<QAExample> read_domain_file(const std::filesystem::path& path, std::size_t* dropped = nullptr);

struct DomainManifest {
  std::string mode;
  std::vector<std::string> order;
};
/// Writes <dir>/<name>.train.jsonl, <dir>/<name>.test.jsonl and <dir>/domains.json.
void write_domains(const std::filesystem::path& dir, const std::string& mode, const std::vector<DomainData>& domains);
std::vector<DomainData> read_domains(const std::filesystem::path& dir, DomainManifest* manifest = nullptr);

// ---------------------------------------------------------------------------
// Domain construction

/// what, which, where, when, how, why, other, who
const std::vector<std::string>& question_domain_order();
/// One of the seven question words, or "other".
std::string question_type(std::string_view question);

struct BuildStats {
  std::size_t dropped_alignment = 0;
};

/// Partitions by question type. When test records are absent, each domain's
/// examples are split with test_fraction using the seed.
std::vector<DomainData> build_cda_q(const std::vector<RawRecord>& train, const std::vector<RawRecord>* test,
                                    double test_fraction, std::uint64_t seed, BuildStats* stats = nullptr);

struct TaggedCollection {
  std::string tag;
  std::vector<RawRecord> train;
  std::vector<RawRecord> test;
};

/// One domain per collection, in the given order. Training splits are
/// down-sampled to n_train without replacement; n_test == 0 keeps every test example.
std::vector<DomainData> build_cda_c(const std::vector<TaggedCollection>& collections, std::size_t n_train,
                                    std::size_t n_test, std::uint64_t seed, BuildStats* stats = nullptr);

struct DatasetStats {
  std::size_t count = 0;
  double mean_question_words = 0.0;
  double mean_answer_words = 0.0;
  double mean_context_words = 0.0;
};
DatasetStats dataset_stats(const std::vector<QAExample>& examples);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;

  Vocabulary();
  /// Counts question and context tokens of every training split; tokens
  /// seen fewer than min_count times map to UNK. Ids follow sorted token order.
  static Vocabulary build(const std::vector<DomainData>& domains, std::size_t min_count = 1);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// ---------------------------------------------------------------------------
// Synthetic domains

/// Template contexts made of marker-led slots ("alpha w3 w9 . beta w1 . ...").
/// Every domain shares the question templates; domain k's answer is the
/// phrase in slot (k mod slots), so consecutive domains contradict each other.
struct SyntheticConfig {
  std::size_t n_domains = 3;
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::size_t slots = 3;
  std::size_t min_phrase = 1;
  std::size_t max_phrase = 2;
  std::size_t max_lead = 2;          // filler words before the first slot
  std::size_t word_pool = 40;        // shared phrase vocabulary
  bool domain_flavor = false;        // add a domain-specific filler word to each context
};

std::vector<DomainData> make_synthetic_cda(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace cda
