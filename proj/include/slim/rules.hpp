#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "slim/model.hpp"
#include "slim/rule_set.hpp"
#include "slim/snr.hpp"

namespace slim {

enum class DeriveMode { PerLayer, DepthAveraged };

std::string_view to_string(DeriveMode m);
std::optional<DeriveMode> parse_derive_mode(std::string_view token);

struct DeriveOptions {
  double cutoff = 1.0;
  DeriveMode mode = DeriveMode::PerLayer;
  /// Consider sharing along both axes as a candidate.
  bool allow_both = true;
  /// Recorded in the rule set's provenance.
  double source_lr = 0.0;
  std::string source;
};

/// SlimAdam policy: each stored matrix takes the sharing dimension with the
/// highest averaged SNR when that SNR reaches the cutoff, otherwise none.
/// Ties prefer Both, then FanOut, then FanIn. Vectors are never compressed.
/// Throws InputError if a matrix lacks SNR for any candidate.
RuleSet derive_rules(const AveragedSnr& averaged, const Census& census, const DeriveOptions& options = {});

/// Recommended sharing dimension per layer type, stated in this codebase's
/// (fan_out, fan_in) orientation. Token embedding and head are (vocab,
/// d_model), so they share along fan_in and keep one moment per token.
Axes canonical_axes(LayerType type);
RuleSet canonical_rules(const Census& census);

struct EntryCount {
  std::size_t total = 0;
  std::size_t stored = 0;
};

struct SavingsReport {
  std::size_t total_entries = 0;
  std::size_t stored_entries = 0;
  double fraction = 0.0;
  std::map<LayerType, EntryCount> per_layer_type;
};

/// Second-moment entries stored under `k` for a block of the given shape.
std::size_t stored_entries(const CensusEntry& entry, Axes k);

/// Counts stored blocks once (tied aliases are skipped). Throws InputError
/// for rules naming unknown or tied-alias blocks, or axes invalid for a block.
SavingsReport savings_report(const Census& census, const RuleSet& rules);
double savings_fraction(const Census& census, const RuleSet& rules);

std::string savings_json(const SavingsReport& report);

}  // namespace slim
