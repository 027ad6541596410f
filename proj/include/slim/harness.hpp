#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slim/data.hpp"
#include "slim/model.hpp"
#include "slim/optim.hpp"
#include "slim/rule_set.hpp"
#include "slim/rules.hpp"
#include "slim/snr.hpp"

namespace slim {

enum class DataSource { Zipf, Corpus, Blobs };

std::string_view to_string(DataSource s);
std::optional<DataSource> parse_data_source(std::string_view token);

struct DataSpec {
  DataSource source = DataSource::Zipf;
  /// vocab is taken from the model spec; seed defaults to the run seed.
  double zipf_alpha = 1.0;
  std::size_t stream_length = 200000;
  std::optional<std::uint64_t> seed;
  std::string corpus_path;
  std::size_t blob_samples = 512;
  /// Tail of the stream (or sample set) kept out of training.
  double heldout_fraction = 0.1;
};

/// Everything that determines a training run.
struct TrainConfig {
  ModelSpec model;
  DataSpec data;
  Hyper hyper;
  Schedule schedule;
  /// Batch sequences (or samples) per step.
  std::size_t batch = 16;
  /// A baseline name (`adam`, `adalayer`, `adalayer_ln_tl`, `adamini_v2`),
  /// `canonical`, `derived`, or `file:<path>`.
  std::string rules = "adam";
  /// Derived rules: measured on an Adam run at lr · derive_lr_factor.
  DeriveOptions derive;
  double derive_lr_factor = 0.1;
  double eps_snr = kDefaultSnrEps;
  bool record_snr = true;
  /// Held-out batches averaged for the evaluation loss.
  std::size_t eval_batches = 8;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Sweep parameters sharing the config document with TrainConfig.
struct ExperimentSpec {
  std::vector<std::size_t> vocabs{64, 256, 1024, 4096};
  std::vector<double> lrs{1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  std::vector<std::string> optimizers{"adam", "slimadam"};
  std::vector<double> cutoffs{0.5, 1.0, 2.0, 4.0};
  std::vector<std::uint64_t> seeds{0};
};

struct ConfigDocument {
  TrainConfig train;
  ExperimentSpec experiment;
};

/// Reads a flat JSON object; every key is optional and unknown keys are
/// rejected. Throws ConfigError.
ConfigDocument parse_config(std::string_view json);
/// Canonical JSON for the resolved config, keys in a fixed order.
std::string config_json(const ConfigDocument& doc);

struct LossRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<LossRow> losses;
  double initial_loss = 0.0;
  /// Last finite training loss.
  double final_loss = 0.0;
  double best_loss = 0.0;
  /// Mean held-out loss after training; equals final_loss for diverged runs.
  double heldout_loss = 0.0;
  bool diverged = false;
  std::string divergence_reason;
  SnrTrajectory snr;
  RuleSet rules;
  Census census;
  SavingsReport savings;
  double wall_seconds = 0.0;
};

/// Rule set named by cfg.rules for the given census; `derived` trains an Adam
/// run first. Throws ConfigError for unknown sources.
RuleSet resolve_rules(const TrainConfig& cfg, const Census& census);

/// One run. Divergence is reported, never thrown.
TrainReport train(const TrainConfig& cfg);
/// As train(), with an explicit rule set instead of cfg.rules.
TrainReport train_with_rules(const TrainConfig& cfg, const RuleSet& rules);

/// losses.csv, snr.csv, rules.txt, savings.json and census.txt under `dir`.
/// Wall time is not written so reruns stay byte-identical.
void write_report(const TrainReport& report, const std::filesystem::path& dir);
std::string format_losses_csv(const TrainReport& report);

/// Shared moment dimensions of the embedding and head in one vocab cell.
struct VocabCell {
  Axes embd = Axes::None;
  Axes head = Axes::None;
};

/// All 16 combinations of {None, token dim, embedding dim, Both}².
std::vector<VocabCell> all_vocab_cells();

struct VocabRow {
  std::size_t vocab = 0;
  std::uint64_t seed = 0;
  VocabCell cell;
  double loss = 0.0;
  /// loss minus the Adam loss of the same vocab and seed.
  double delta_loss = 0.0;
  bool diverged = false;
};

struct VocabSnrRow {
  std::size_t vocab = 0;
  std::uint64_t seed = 0;
  /// Averaged SNR of embedding and head, along the token and embedding dims.
  double token_snr = 0.0;
  double embedding_snr = 0.0;
};

struct VocabResult {
  std::vector<VocabRow> rows;
  std::vector<VocabSnrRow> snr;
};

/// Untied LinearTokenModel per vocab and seed: an Adam run (SNR, reference
/// loss) plus one run per requested cell; the (None, None) cell is the Adam
/// run itself.
VocabResult vocab_experiment(const TrainConfig& base, const std::vector<std::size_t>& vocabs,
                             const std::vector<VocabCell>& cells, const std::vector<std::uint64_t>& seeds);
std::string format_vocab_csv(const VocabResult& result);
std::string format_vocab_snr_csv(const VocabResult& result);

struct SweepRow {
  std::string optimizer;
  double lr = 0.0;
  double loss = 0.0;
  bool diverged = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// Set when `slimadam` was swept: the rules and the lr they came from.
  std::optional<RuleSet> slim_rules;
  std::optional<double> adam_best_lr;
};

/// Runs every optimizer at every lr. `slimadam` derives its rules once, from
/// an Adam run at (Adam's best lr) / 10, so Adam is always swept first.
SweepResult lr_sweep(const TrainConfig& base, const std::vector<double>& lrs,
                     const std::vector<std::string>& optimizers);
std::string format_sweep_csv(const SweepResult& result);
/// Index into `lrs` of the lowest non-diverged loss for `optimizer`.
std::optional<std::size_t> argmin_lr(const SweepResult& result, std::string_view optimizer,
                                     const std::vector<double>& lrs);

struct SnrLrRow {
  double lr = 0.0;
  LayerType layer_type = LayerType::Generic;
  Axes k = Axes::Both;
  double snr = 0.0;
  bool diverged = false;
};

struct SavingsRow {
  double lr = 0.0;
  double cutoff = 0.0;
  double savings = 0.0;
  bool diverged = false;
};

struct SnrLrResult {
  std::vector<SnrLrRow> snr;
  std::vector<SavingsRow> savings;
};

/// Adam run per lr: depth-averaged SNR at the best k per layer type, and the
/// savings of rules derived at each cutoff.
SnrLrResult snr_vs_lr(const TrainConfig& base, const std::vector<double>& lrs, const std::vector<double>& cutoffs);
std::string format_snr_lr_csv(const SnrLrResult& result);
std::string format_savings_surface_csv(const SnrLrResult& result);

/// Spearman rank correlation with average ranks for ties; 0 for fewer than
/// two points or constant input.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace slim
