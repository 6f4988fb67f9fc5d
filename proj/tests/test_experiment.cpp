#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cda/error.hpp"
#include "cda/experiment.hpp"

using namespace cda;
namespace fs = std::filesystem;

namespace {

const char* kTinySpec = R"({
  "synthetic": {"n_domains": 2, "n_train": 24, "n_test": 12},
  "strategies": ["base", {"kind": "reg", "lambda": 5}, {"kind": "prog", "adapter": {"d_s": 4}}],
  "train": {"epochs": 1, "batch_size": 8, "seed": 2},
  "model": {"d": 16, "n_heads": 2, "d_ff": 32, "n_layers": 1, "max_len": 40}
})";

ExperimentSpec tiny_spec(const fs::path& out) {
  ExperimentSpec s = parse_spec(kTinySpec);
  s.out = out;
  s.finalize();
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CDA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_mrqa(const fs::path& path, const std::string& prefix, std::size_t n) {
  std::ofstream out(path);
  out << R"({"header": {"dataset": ")" << prefix << R"("}})" << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = prefix + std::to_string(i);
    out << R"({"context": "the river )" << id << R"( runs north", "qas": [{"qid": ")" << id
        << R"(", "question": "where does it run?", "answers": ["north"], "detected_answers": [{"text": "north", "char_spans": [[)"
        << 16 + id.size() << ", " << 20 + id.size() << "]]}]}]}\n";
  }
}

}  // namespace

TEST(Spec, ParseFinalizeAndRoundTrip) {
  ExperimentSpec s = parse_spec(kTinySpec);
  s.finalize();
  ASSERT_EQ(s.strategies.size(), 3u);
  EXPECT_EQ(s.strategies[1].lambda, 5.0);
  ASSERT_TRUE(s.strategies[2].adapter);
  EXPECT_EQ(s.strategies[2].adapter->d, 16u);
  EXPECT_EQ(s.train.learning_rate, TrainConfig{}.learning_rate);
  ExperimentSpec back = parse_spec(spec_to_json(s));
  back.finalize();
  EXPECT_EQ(spec_to_json(back), spec_to_json(s));
  EXPECT_EQ(config_hash(back), config_hash(s));
  EXPECT_EQ(config_hash(s).size(), 16u);
  s.out = "elsewhere";
  EXPECT_EQ(config_hash(back), config_hash(s));
  s.train.seed = 9;
  EXPECT_NE(config_hash(back), config_hash(s));
}

TEST(Spec, DefaultsToBase) {
  ExperimentSpec s = parse_spec("{}");
  s.finalize();
  ASSERT_EQ(s.strategies.size(), 1u);
  EXPECT_EQ(s.strategies[0].kind, StrategyKind::kBase);
}

TEST(Spec, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_spec(R"({"trian": {}})"), ConfigError);
  EXPECT_THROW(parse_spec(R"({"train": {"lr": 1}})"), ConfigError);
  EXPECT_THROW(parse_spec("{not json"), ConfigError);
  EXPECT_THROW(parse_spec(R"({"train": {"optimizer": "sgd"}})"), ConfigError);
  ExperimentSpec s = parse_spec(R"({"train": {"epochs": 0}})");
  EXPECT_THROW(s.finalize(), ConfigError);
  s = parse_spec(R"({"mode": "cda-x"})");
  EXPECT_THROW(s.finalize(), ConfigError);
  s = parse_spec(R"({"model": {"d": 10, "n_heads": 3}})");
  EXPECT_THROW(s.finalize(), ConfigError);
}

TEST(Spec, OverridesApplyOnTop) {
  ExperimentSpec s = parse_spec(kTinySpec);
  SpecOverrides o;
  o.strategies = {"prog"};
  o.adapter_structure = "pal";
  o.adapter_insertion = "aside";
  o.adapter_dim = 8;
  o.no_adapter_init = true;
  o.lr = 0.01;
  o.seed = 4;
  o.order = "descending";
  o.apply(s);
  s.finalize();
  ASSERT_EQ(s.strategies.size(), 1u);
  EXPECT_EQ(s.strategies[0].label(), "PROG_A-PAL_noinit");
  EXPECT_EQ(s.strategies[0].adapter->d_s, 8u);
  EXPECT_EQ(s.train.learning_rate, 0.01);
  EXPECT_EQ(s.train.seed, 4u);
  EXPECT_EQ(s.order, (std::vector<std::string>{"descending"}));
  SpecOverrides names;
  names.order = "syn1,syn0";
  names.apply(s);
  EXPECT_EQ(s.order, (std::vector<std::string>{"syn1", "syn0"}));
}

TEST(Order, PoliciesAndExplicitLists) {
  std::vector<DomainData> d(3);
  d[0].name = "a";
  d[1].name = "b";
  d[2].name = "c";
  d[0].train.resize(5);
  d[1].train.resize(2);
  d[2].train.resize(5);
  auto names = [](const std::vector<DomainData>& v) {
    std::vector<std::string> n;
    for (const auto& x : v) n.push_back(x.name);
    return n;
  };
  EXPECT_EQ(names(order_domains(d, {"given"})), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(names(order_domains(d, {"ascending"})), (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(names(order_domains(d, {"descending"})), (std::vector<std::string>{"a", "c", "b"}));
  EXPECT_EQ(names(order_domains(d, {"c", "a"})), (std::vector<std::string>{"c", "a"}));
  EXPECT_THROW(order_domains(d, {"a", "z"}), ConfigError);
  EXPECT_THROW(order_domains(d, {"a", "a"}), ConfigError);
}

TEST(AdapterSweep, ScaledWidths) {
  AdapterConfig bn;
  EXPECT_EQ(scale_adapter_width(256, 768, bn), 256u);
  EXPECT_EQ(scale_adapter_width(256, 32, bn), 11u);  // round(256 * 32 / 768)
  EXPECT_EQ(scale_adapter_width(32, 32, bn), 4u);
  AdapterConfig pal;
  pal.structure = AdapterStructure::kPal;
  pal.pal_heads = 2;
  EXPECT_EQ(scale_adapter_width(256, 32, pal), 12u);
}

TEST(Run, ReportsAreByteIdenticalAcrossRuns) {
  const fs::path a = fresh_dir("cda_run_a"), b = fresh_dir("cda_run_b");
  const RunBundle ra = cmd_run(tiny_spec(a));
  const RunBundle rb = cmd_run(tiny_spec(b));
  ASSERT_EQ(ra.runs.size(), 3u);
  EXPECT_EQ(ra.config_hash, rb.config_hash);
  for (const std::string f : {"report.json", "BASE.csv", "REG.csv", "PROG_I-BN.csv", "BASE.log.jsonl", "REG.log.jsonl"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_TRUE(fs::exists(a / "timing.json"));
  EXPECT_EQ(slurp(a / "report.json").find("wall"), std::string::npos);
  EXPECT_EQ(slurp(a / "BASE.csv").substr(0, 37), "step,domain,em,f1,overall,rel_change\n");

  // PROG never changes an earlier domain's score.
  const auto& prog = ra.runs[2].result.matrix;
  EXPECT_EQ(prog.cell(1, 0)->f1, prog.cell(0, 0)->f1);

  // report regenerates the same CSVs and a text table.
  const std::string before = slurp(a / "REG.csv");
  fs::remove(a / "REG.csv");
  cmd_report(a, "csv");
  EXPECT_EQ(slurp(a / "REG.csv"), before);
  const auto text = cmd_report(a, "text");
  ASSERT_EQ(text.size(), 1u);
  EXPECT_NE(slurp(text[0]).find("PROG_I-BN"), std::string::npos);
  EXPECT_THROW(cmd_report(a, "xml"), ConfigError);
  EXPECT_THROW(cmd_report(fresh_dir("cda_run_none"), "csv"), DataError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, DuplicateLabelsAreSuffixed) {
  const fs::path dir = fresh_dir("cda_run_dup");
  ExperimentSpec s = parse_spec(kTinySpec);
  s.synthetic.n_domains = 1;
  s.strategies.clear();
  s.strategies.resize(2);
  s.strategies[1].kind = StrategyKind::kReg;
  s.strategies[1].lambda = 0.0;
  s.strategies.push_back(s.strategies[1]);
  s.out = dir;
  s.finalize();
  const RunBundle r = cmd_run(s);
  EXPECT_EQ(r.runs[2].label, "REG_2");
  EXPECT_TRUE(fs::exists(dir / "REG_2.csv"));
  fs::remove_all(dir);
}

TEST(Experiments, CurveTransferOrderAndSweep) {
  const fs::path dir = fresh_dir("cda_exp");
  ExperimentSpec s = tiny_spec(dir);
  s.strategies.resize(1);
  const auto curve = cmd_forgetting_curve(s, 0);
  ASSERT_EQ(curve.size(), 2u);  // one epoch per domain, two domains
  EXPECT_DOUBLE_EQ(curve[1].progress, 2.0);
  EXPECT_TRUE(fs::exists(dir / "forgetting_curve.csv"));
  EXPECT_THROW(cmd_forgetting_curve(s, 5), ConfigError);

  const auto transfer = cmd_forward_transfer(s);
  ASSERT_EQ(transfer.size(), 3u);
  EXPECT_EQ(transfer[2].strategy, "INDIVIDUAL");
  // The first domain is trained identically with or without adapter initialization.
  EXPECT_EQ(transfer[0].f1[0], transfer[1].f1[0]);

  const auto orders = cmd_order_robustness(s, {"given", "syn1,syn0"});
  ASSERT_EQ(orders.size(), 2u);
  EXPECT_EQ(orders[1].domains, (std::vector<std::string>{"syn1", "syn0"}));

  const auto sweep = cmd_adapter_sweep(s, {32, 256});
  ASSERT_EQ(sweep.size(), 2u);
  EXPECT_LT(sweep[0].adapter_params, sweep[1].adapter_params);
  EXPECT_TRUE(fs::exists(dir / "adapter_sweep.csv"));
  fs::remove_all(dir);
}

TEST(Split, CdaCFromMrqaFiles) {
  const fs::path dir = fresh_dir("cda_split");
  fs::create_directories(dir);
  write_mrqa(dir / "a_train.jsonl", "a", 12);
  write_mrqa(dir / "a_test.jsonl", "at", 6);
  write_mrqa(dir / "b_train.jsonl", "b", 8);
  write_mrqa(dir / "b_test.jsonl", "bt", 3);
  SplitOptions o;
  o.mode = "cda-c";
  o.inputs = {"wiki=" + (dir / "a_train.jsonl").string() + "," + (dir / "a_test.jsonl").string(),
              "news=" + (dir / "b_train.jsonl").string() + "," + (dir / "b_test.jsonl").string()};
  o.n_train = 10;
  o.n_test = 0;
  o.out = dir / "out";
  const SplitSummary sum = cmd_split(o);
  ASSERT_EQ(sum.domains.size(), 2u);
  EXPECT_EQ(sum.domains[0].train.size(), 10u);
  EXPECT_EQ(sum.domains[1].train.size(), 8u);
  EXPECT_EQ(sum.domains[0].test.size(), 6u);
  EXPECT_EQ(sum.domains[0].train[0].answer_text, "north");
  const auto back = read_domains(o.out);
  EXPECT_EQ(back[1].name, "news");
  o.inputs = {"wiki"};
  EXPECT_THROW(cmd_split(o), ConfigError);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cda_cli");
  fs::create_directories(dir);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("run --no-such-flag"), 2);
  EXPECT_EQ(run_cli("run --strategy replay --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("run --data " + (dir / "missing").string() + " --out " + dir.string()), 3);
  EXPECT_EQ(run_cli("synth --domains 2 --n-train 5 --n-test 2 --out " + (dir / "syn").string()), 0);
  EXPECT_EQ(run_cli("stats " + (dir / "syn").string()), 0);
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << kTinySpec;
  }
  EXPECT_EQ(run_cli("run --config " + (dir / "cfg.json").string() + " --data " + (dir / "syn").string() +
                    " --strategy base --out " + (dir / "run").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "run" / "BASE.csv"));
  EXPECT_EQ(run_cli("report " + (dir / "run").string()), 0);
  fs::remove_all(dir);
}
