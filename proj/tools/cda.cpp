#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cda/error.hpp"
#include "cda/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kInvariant = 4 };

struct RunFlags {
  std::string config;
  cda::SpecOverrides o;
  std::string data, mode, order, structure, insertion, out;
  double lambda = 0, lr = 0;
  std::size_t adapter_dim = 0, epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config");
  cmd->add_option("--data", f.data, "\"synthetic\" or a directory written by split");
  cmd->add_option("--mode", f.mode, "synthetic, cda-c or cda-q");
  cmd->add_option("--strategy", f.o.strategies, "base, reg, prog or individual (repeatable)");
  cmd->add_option("--order", f.order, "given, ascending, descending, or comma-separated domain names");
  cmd->add_option("--lambda", f.lambda, "EWC weight for reg");
  cmd->add_option("--adapter-structure", f.structure, "pal or bn");
  cmd->add_option("--adapter-insertion", f.insertion, "inside or aside");
  cmd->add_option("--adapter-dim", f.adapter_dim, "adapter projection width");
  cmd->add_flag("--no-adapter-init", f.o.no_adapter_init, "start each domain's adapters from scratch");
  cmd->add_option("--lr", f.lr, "peak learning rate");
  cmd->add_option("--epochs", f.epochs, "epochs per domain");
  cmd->add_option("--batch-size", f.batch_size, "examples per batch");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--out", f.out, "output directory (default $CDA_OUT_DIR or runs)");
}

cda::ExperimentSpec resolve(const CLI::App* cmd, RunFlags& f) {
  cda::ExperimentSpec spec = f.config.empty() ? cda::ExperimentSpec{} : cda::load_spec(f.config);
  auto& o = f.o;
  if (cmd->count("--data")) o.data = f.data;
  if (cmd->count("--mode")) o.mode = f.mode;
  if (cmd->count("--order")) o.order = f.order;
  if (cmd->count("--lambda")) o.lambda = f.lambda;
  if (cmd->count("--adapter-structure")) o.adapter_structure = f.structure;
  if (cmd->count("--adapter-insertion")) o.adapter_insertion = f.insertion;
  if (cmd->count("--adapter-dim")) o.adapter_dim = f.adapter_dim;
  if (cmd->count("--lr")) o.lr = f.lr;
  if (cmd->count("--epochs")) o.epochs = f.epochs;
  if (cmd->count("--batch-size")) o.batch_size = f.batch_size;
  if (cmd->count("--seed")) o.seed = f.seed;
  if (cmd->count("--out")) o.out = f.out;
  o.apply(spec);
  if (spec.out.empty()) spec.out = cda::default_out_dir();
  spec.finalize();
  return spec;
}

void print_matrix(const std::string& label, const cda::ResultsMatrix& m) {
  std::printf("%s\n", label.c_str());
  for (std::size_t s = 0; s < m.steps(); ++s) {
    std::printf("  step %zu:", s + 1);
    for (std::size_t k = 0; k <= s; ++k) std::printf(" %s=%.2f", m.domains()[k].c_str(), m.row(s)[k].f1);
    std::printf("  overall=%.2f\n", m.overall(s));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual domain adaptation lab for extractive QA"};
  app.require_subcommand(1);

  cda::SplitOptions split;
  auto* split_cmd = app.add_subcommand("split", "build domain files from MRQA-format inputs");
  split_cmd->add_option("--mode", split.mode, "cda-q or cda-c")->required();
  split_cmd->add_option("inputs", split.inputs, "cda-q: train.jsonl [test.jsonl]; cda-c: tag=train.jsonl,test.jsonl ...")
      ->required();
  split_cmd->add_option("--test-fraction", split.test_fraction, "cda-q test share when no test file is given");
  split_cmd->add_option("--n-train", split.n_train, "cda-c training examples per domain");
  split_cmd->add_option("--n-test", split.n_test, "cda-c test examples per domain (0 keeps all)");
  split_cmd->add_option("--seed", split.seed, "sampling seed");
  std::string split_out;
  split_cmd->add_option("--out", split_out, "output directory")->required();

  cda::SyntheticConfig synth;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write synthetic interference domains");
  synth_cmd->add_option("--domains", synth.n_domains, "number of domains");
  synth_cmd->add_option("--n-train", synth.n_train, "training examples per domain");
  synth_cmd->add_option("--n-test", synth.n_test, "test examples per domain");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  std::string stats_dir;
  auto* stats_cmd = app.add_subcommand("stats", "per-domain example counts and mean word lengths");
  stats_cmd->add_option("dir", stats_dir, "directory written by split or synth")->required();

  RunFlags run_flags, curve_flags, transfer_flags, order_flags, sweep_flags;
  auto* run_cmd = app.add_subcommand("run", "train every strategy over the domain sequence");
  add_run_flags(run_cmd, run_flags);

  std::size_t tracked = 1;
  auto* curve_cmd = app.add_subcommand("forgetting-curve", "F1 of one domain at every later epoch boundary");
  add_run_flags(curve_cmd, curve_flags);
  curve_cmd->add_option("--track", tracked, "1-based domain to track");

  auto* transfer_cmd = app.add_subcommand("forward-transfer", "PROG with and without adapter init vs INDIVIDUAL");
  add_run_flags(transfer_cmd, transfer_flags);

  std::vector<std::string> orders{"given", "ascending", "descending"};
  auto* order_cmd = app.add_subcommand("order-robustness", "final overall score per domain order");
  add_run_flags(order_cmd, order_flags);
  order_cmd->add_option("--orders", orders, "policies or comma-separated name lists")->take_all();

  std::vector<std::size_t> sizes{32, 64, 128, 256, 384, 512};
  auto* sweep_cmd = app.add_subcommand("adapter-sweep", "PROG runs over adapter widths (768-wide reference)");
  add_run_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--sizes", sizes, "reference widths")->take_all();

  std::string report_dir, report_format = "text";
  auto* report_cmd = app.add_subcommand("report", "re-emit a run's matrices");
  report_cmd->add_option("dir", report_dir, "run output directory")->required();
  report_cmd->add_option("--format", report_format, "csv or text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*split_cmd) {
      split.out = split_out;
      const auto s = cda::cmd_split(split);
      for (const auto& d : s.domains) std::printf("%s: %zu train, %zu test\n", d.name.c_str(), d.train.size(), d.test.size());
      std::printf("skipped (no spans): %zu, dropped (alignment): %zu\n", s.skipped_missing_spans, s.dropped_alignment);
    } else if (*synth_cmd) {
      cda::write_domains(synth_out, "synthetic", cda::make_synthetic_cda(synth, synth_seed));
      std::printf("wrote %zu domains to %s\n", synth.n_domains, synth_out.c_str());
    } else if (*stats_cmd) {
      std::printf("domain,split,count,q_words,a_words,c_words\n");
      for (const auto& d : cda::read_domains(stats_dir)) {
        for (const auto* part : {&d.train, &d.test}) {
          const auto st = cda::dataset_stats(*part);
          std::printf("%s,%s,%zu,%.2f,%.2f,%.2f\n", d.name.c_str(), part == &d.train ? "train" : "test", st.count,
                      st.mean_question_words, st.mean_answer_words, st.mean_context_words);
        }
      }
    } else if (*run_cmd) {
      const auto spec = resolve(run_cmd, run_flags);
      const auto bundle = cda::cmd_run(spec);
      for (const auto& r : bundle.runs) print_matrix(r.label, r.result.matrix);
      std::printf("config %s, %.1fs, written to %s\n", bundle.config_hash.c_str(), bundle.wall_seconds,
                  spec.out.string().c_str());
    } else if (*curve_cmd) {
      if (tracked < 1) throw cda::ConfigError("--track is 1-based");
      const auto spec = resolve(curve_cmd, curve_flags);
      for (const auto& p : cda::cmd_forgetting_curve(spec, tracked - 1))
        std::printf("%s step %zu epoch %zu: f1=%.2f\n", p.strategy.c_str(), p.step, p.epoch, p.f1);
    } else if (*transfer_cmd) {
      const auto spec = resolve(transfer_cmd, transfer_flags);
      for (const auto& r : cda::cmd_forward_transfer(spec)) {
        std::printf("%s:", r.strategy.c_str());
        for (double f : r.f1) std::printf(" %.2f", f);
        std::printf("  overall=%.2f\n", r.overall);
      }
    } else if (*order_cmd) {
      const auto spec = resolve(order_cmd, order_flags);
      for (const auto& r : cda::cmd_order_robustness(spec, orders))
        std::printf("%s %s: overall=%.2f\n", r.order.c_str(), r.strategy.c_str(), r.overall);
    } else if (*sweep_cmd) {
      const auto spec = resolve(sweep_cmd, sweep_flags);
      for (const auto& r : cda::cmd_adapter_sweep(spec, sizes))
        std::printf("ref %zu -> d_s %zu (%zu params): overall=%.2f\n", r.reference, r.d_s, r.adapter_params, r.overall);
    } else if (*report_cmd) {
      for (const auto& p : cda::cmd_report(report_dir, report_format)) std::printf("%s\n", p.string().c_str());
    }
  } catch (const cda::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const cda::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const cda::InvariantViolation& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return kInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
