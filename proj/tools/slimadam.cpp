// Command-line front end for the training harness and rule engine.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slim/errors.hpp"
#include "slim/harness.hpp"
#include "slim/io_util.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct Overrides {
  std::string config;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<double> cutoff;
  std::string rules;
  std::string out;
  bool no_both = false;
};

void add_common(CLI::App* cmd, Overrides& o, const std::string& default_out) {
  o.out = default_out;
  cmd->add_option("--config", o.config, "Flat JSON config document");
  cmd->add_option("--lr", o.lr, "Peak learning rate");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--cutoff", o.cutoff, "SNR cutoff for derived rules");
  cmd->add_option("--rules", o.rules, "Rules file (name axes per line)");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--no-both", o.no_both, "Exclude sharing along both axes from derived rules");
}

slim::ConfigDocument load(const Overrides& o) {
  slim::ConfigDocument doc = o.config.empty() ? slim::parse_config("{}") : slim::parse_config(slim::read_file(o.config));
  slim::TrainConfig& t = doc.train;
  if (o.lr) t.hyper.lr = t.schedule.peak_lr = *o.lr;
  if (o.seed) t.seed = *o.seed;
  if (o.cutoff) t.derive.cutoff = *o.cutoff;
  if (!o.rules.empty()) t.rules = "file:" + o.rules;
  if (o.no_both) t.derive.allow_both = false;
  t.validate();
  return doc;
}

void write_run_json(const slim::ConfigDocument& doc, const fs::path& out) {
  slim::write_file(out / "run.json", slim::config_json(doc));
}

slim::Census load_census(const std::string& source, const slim::ConfigDocument& doc) {
  if (source.empty()) return slim::census_of(doc.train.model);
  if (source == "gpt2_small") return slim::census_of(slim::gpt2_small_spec());
  return slim::parse_census(slim::read_file(source));
}

int cmd_train(const Overrides& o) {
  const auto doc = load(o);
  const slim::TrainReport report = slim::train(doc.train);
  slim::write_report(report, o.out);
  write_run_json(doc, o.out);
  std::cout << "heldout_loss " << slim::format_double(report.heldout_loss) << "\nsavings "
            << slim::format_double(report.savings.fraction) << "\n";
  if (report.diverged) {
    std::cerr << "diverged: " << report.divergence_reason << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_vocab(const Overrides& o) {
  const auto doc = load(o);
  const auto result =
      slim::vocab_experiment(doc.train, doc.experiment.vocabs, slim::all_vocab_cells(), doc.experiment.seeds);
  slim::write_file(fs::path(o.out) / "vocab.csv", slim::format_vocab_csv(result));
  slim::write_file(fs::path(o.out) / "vocab_snr.csv", slim::format_vocab_snr_csv(result));
  write_run_json(doc, o.out);
  const bool all_diverged = std::all_of(result.rows.begin(), result.rows.end(), [](const auto& r) { return r.diverged; });
  return all_diverged ? kExitDiverged : kExitOk;
}

int cmd_sweep(const Overrides& o) {
  const auto doc = load(o);
  const auto result = slim::lr_sweep(doc.train, doc.experiment.lrs, doc.experiment.optimizers);
  slim::write_file(fs::path(o.out) / "sweep.csv", slim::format_sweep_csv(result));
  if (result.slim_rules) slim::write_file(fs::path(o.out) / "rules.txt", slim::serialize_rules(*result.slim_rules));
  write_run_json(doc, o.out);
  std::cout << slim::format_sweep_csv(result);
  const bool all_diverged = std::all_of(result.rows.begin(), result.rows.end(), [](const auto& r) { return r.diverged; });
  return all_diverged ? kExitDiverged : kExitOk;
}

int cmd_snr_lr(const Overrides& o) {
  const auto doc = load(o);
  const auto result = slim::snr_vs_lr(doc.train, doc.experiment.lrs, doc.experiment.cutoffs);
  slim::write_file(fs::path(o.out) / "snr_vs_lr.csv", slim::format_snr_lr_csv(result));
  slim::write_file(fs::path(o.out) / "savings_surface.csv", slim::format_savings_surface_csv(result));
  write_run_json(doc, o.out);
  const bool all_diverged =
      std::all_of(result.savings.begin(), result.savings.end(), [](const auto& r) { return r.diverged; });
  return all_diverged ? kExitDiverged : kExitOk;
}

int cmd_derive(const Overrides& o, const std::string& snr_path, const std::string& census_source,
               const std::string& mode) {
  auto doc = load(o);
  if (!mode.empty()) {
    const auto m = slim::parse_derive_mode(mode);
    if (!m) throw slim::ConfigError("unknown mode `" + mode + "`");
    doc.train.derive.mode = *m;
  }
  const slim::Census census = load_census(census_source, doc);
  slim::RuleSet rules;
  if (snr_path.empty()) {
    doc.train.rules = "derived";
    rules = slim::resolve_rules(doc.train, census);
  } else {
    slim::DeriveOptions opts = doc.train.derive;
    opts.source = snr_path;
    rules = slim::derive_rules(slim::averaged_snr(slim::parse_snr_csv(slim::read_file(snr_path))), census, opts);
  }
  slim::write_file(fs::path(o.out) / "rules.txt", slim::serialize_rules(rules));
  std::cout << slim::serialize_rules(rules);
  return kExitOk;
}

int cmd_savings(const Overrides& o, const std::string& census_source) {
  const auto doc = load(o);
  const slim::Census census = load_census(census_source, doc);
  const slim::RuleSet rules = slim::resolve_rules(doc.train, census);
  const std::string report = slim::savings_json(slim::savings_report(census, rules));
  slim::write_file(fs::path(o.out) / "savings.json", report);
  std::cout << report;
  return kExitOk;
}

int cmd_census(const Overrides& o, const std::string& census_source) {
  const auto doc = load(o);
  std::cout << slim::format_census(load_census(census_source, doc));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared second-moment Adam laboratory"};
  app.require_subcommand(1);

  Overrides train_o, vocab_o, sweep_o, snr_o, derive_o, savings_o, census_o;
  std::string snr_path, derive_census, derive_mode, savings_census, census_census;

  auto* train = app.add_subcommand("train", "Train one model and write its report");
  add_common(train, train_o, "out/train");
  auto* vocab = app.add_subcommand("vocab-exp", "Vocabulary-size grid on the linear token model");
  add_common(vocab, vocab_o, "out/vocab");
  auto* sweep = app.add_subcommand("lr-sweep", "Loss against learning rate per optimizer");
  add_common(sweep, sweep_o, "out/sweep");
  auto* snr = app.add_subcommand("snr-vs-lr", "Depth-averaged SNR and savings against learning rate");
  add_common(snr, snr_o, "out/snr_vs_lr");
  auto* derive = app.add_subcommand("derive-rules", "Derive SlimAdam rules from an SNR trajectory");
  add_common(derive, derive_o, "out/derive");
  derive->add_option("--snr", snr_path, "snr.csv to derive from (otherwise run Adam at lr x derive_lr_factor)");
  derive->add_option("--census", derive_census, "Census file, or gpt2_small (default: the config's model)");
  derive->add_option("--mode", derive_mode, "per_layer or depth_averaged");
  auto* savings = app.add_subcommand("savings", "Second-moment savings of a rule set");
  add_common(savings, savings_o, "out/savings");
  savings->add_option("--census", savings_census, "Census file, or gpt2_small (default: the config's model)");
  auto* census = app.add_subcommand("census", "Print the block census");
  add_common(census, census_o, "out/census");
  census->add_option("--census", census_census, "Census file, or gpt2_small (default: the config's model)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*vocab) return cmd_vocab(vocab_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*snr) return cmd_snr_lr(snr_o);
    if (*derive) return cmd_derive(derive_o, snr_path, derive_census, derive_mode);
    if (*savings) return cmd_savings(savings_o, savings_census);
    if (*census) return cmd_census(census_o, census_census);
  } catch (const slim::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
