#include "slim/rules.hpp"

#include <array>
#include <set>

#include <json.hpp>

#include "slim/errors.hpp"

namespace slim {

std::string_view to_string(DeriveMode m) {
  return m == DeriveMode::PerLayer ? "per_layer" : "depth_averaged";
}

std::optional<DeriveMode> parse_derive_mode(std::string_view token) {
  if (token == "per_layer") return DeriveMode::PerLayer;
  if (token == "depth_averaged") return DeriveMode::DepthAveraged;
  return std::nullopt;
}

RuleSet derive_rules(const AveragedSnr& averaged, const Census& census, const DeriveOptions& options) {
  if (!(options.cutoff > 0.0)) throw InputError("derive_rules: cutoff must be positive");
  const DepthAveragedSnr by_type =
      options.mode == DeriveMode::DepthAveraged ? depth_averaged_snr(averaged, census) : DepthAveragedSnr{};

  // Tie-break order: earlier wins on equal SNR.
  std::vector<Axes> candidates;
  if (options.allow_both) candidates.push_back(Axes::Both);
  candidates.push_back(Axes::FanOut);
  candidates.push_back(Axes::FanIn);

  RuleSet rules(Provenance{Provenance::Kind::Derived, options.source, options.cutoff, options.source_lr});
  for (const CensusEntry& e : census) {
    if (e.tied_to) continue;
    if (!e.is_matrix()) {
      rules.set(e.name, Axes::None);
      continue;
    }
    std::optional<Axes> best;
    double best_snr = 0.0;
    for (Axes k : candidates) {
      double value = 0.0;
      if (options.mode == DeriveMode::DepthAveraged) {
        const auto it = by_type.find({e.layer_type, k});
        if (it == by_type.end()) throw InputError("no SNR for layer type " + std::string(to_string(e.layer_type)));
        value = it->second;
      } else {
        const auto it = averaged.find({e.name, k});
        if (it == averaged.end()) {
          throw InputError("no averaged SNR for block `" + e.name + "` along " + std::string(to_string(k)));
        }
        value = it->second;
      }
      if (!best || value > best_snr) {
        best = k;
        best_snr = value;
      }
    }
    rules.set(e.name, best_snr >= options.cutoff ? *best : Axes::None);
  }
  return rules;
}

Axes canonical_axes(LayerType type) {
  switch (type) {
    case LayerType::AttnKey:
    case LayerType::AttnQuery: return Axes::FanIn;
    case LayerType::AttnValue:
    case LayerType::AttnProj:
    case LayerType::MLPUp:
    case LayerType::MLPDown: return Axes::FanOut;
    case LayerType::TokEmbd:
    case LayerType::LMHead: return Axes::FanIn;
    case LayerType::AttnLN:
    case LayerType::MLPLN:
    case LayerType::FinalLN:
    case LayerType::PosEmbd:
    case LayerType::Generic: return Axes::None;
  }
  return Axes::None;
}

RuleSet canonical_rules(const Census& census) {
  RuleSet rules(Provenance{Provenance::Kind::Baseline, "canonical", 0.0, 0.0});
  for (const CensusEntry& e : census) {
    if (e.tied_to) continue;
    rules.set(e.name, e.is_matrix() ? canonical_axes(e.layer_type) : Axes::None);
  }
  return rules;
}

std::size_t stored_entries(const CensusEntry& entry, Axes k) {
  if (!entry.is_matrix() && (k == Axes::FanIn || k == Axes::FanOut)) {
    throw InputError("axes " + std::string(to_string(k)) + " invalid for vector block `" + entry.name + "`");
  }
  switch (k) {
    case Axes::None: return entry.numel();
    case Axes::FanOut: return entry.fan_in;
    case Axes::FanIn: return entry.fan_out;
    case Axes::Both: return 1;
  }
  return entry.numel();
}

SavingsReport savings_report(const Census& census, const RuleSet& rules) {
  std::set<std::string, std::less<>> stored_names;
  std::set<std::string, std::less<>> alias_names;
  for (const CensusEntry& e : census) (e.tied_to ? alias_names : stored_names).insert(e.name);
  for (const auto& [name, k] : rules.entries()) {
    if (alias_names.contains(name)) throw InputError("rule names tied alias `" + name + "`");
    if (!stored_names.contains(name)) throw InputError("rule for unknown block `" + name + "`");
  }

  SavingsReport report;
  for (const CensusEntry& e : census) {
    if (e.tied_to) continue;
    const std::size_t full = e.numel();
    const std::size_t kept = stored_entries(e, rules.at(e.name));
    report.total_entries += full;
    report.stored_entries += kept;
    auto& bucket = report.per_layer_type[e.layer_type];
    bucket.total += full;
    bucket.stored += kept;
  }
  report.fraction = report.total_entries == 0
                        ? 0.0
                        : 1.0 - static_cast<double>(report.stored_entries) / static_cast<double>(report.total_entries);
  return report;
}

double savings_fraction(const Census& census, const RuleSet& rules) {
  return savings_report(census, rules).fraction;
}

std::string savings_json(const SavingsReport& report) {
  nlohmann::ordered_json j;
  j["total_entries"] = report.total_entries;
  j["stored_entries"] = report.stored_entries;
  j["fraction"] = report.fraction;
  nlohmann::ordered_json per_type = nlohmann::ordered_json::object();
  for (const auto& [type, count] : report.per_layer_type) {
    const double frac = count.total == 0 ? 0.0 : 1.0 - static_cast<double>(count.stored) / static_cast<double>(count.total);
    per_type[std::string(to_string(type))] = {{"total", count.total}, {"stored", count.stored}, {"fraction", frac}};
  }
  j["per_layer_type"] = per_type;
  return j.dump(2) + "\n";
}

}  // namespace slim
