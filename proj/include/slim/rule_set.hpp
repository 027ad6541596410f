#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slim/tensor.hpp"

namespace slim {

/// Where a rule set came from.
struct Provenance {
  enum class Kind { Manual, Baseline, Derived };
  Kind kind = Kind::Manual;
  /// Baseline variant name, or the source run for derived rules.
  std::string source;
  double cutoff = 0.0;
  double lr = 0.0;

  bool operator==(const Provenance&) const = default;
};

/// Per-block sharing dimensions, in insertion order. A block without an entry
/// keeps full (uncompressed) second moments.
class RuleSet {
 public:
  RuleSet() = default;
  explicit RuleSet(Provenance provenance) : provenance_(std::move(provenance)) {}

  /// Adds a rule; throws InputError if the block already has one.
  void set(std::string block, Axes k);
  std::optional<Axes> find(std::string_view block) const;
  Axes at(std::string_view block) const { return find(block).value_or(Axes::None); }

  const std::vector<std::pair<std::string, Axes>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const Provenance& provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = std::move(p); }

  bool operator==(const RuleSet&) const = default;

 private:
  std::vector<std::pair<std::string, Axes>> entries_;
  Provenance provenance_;
};

/// `name axes` per line. Non-manual provenance is written as a leading
/// `# provenance ...` comment, which parse_rules reads back.
std::string serialize_rules(const RuleSet& rules);
/// Throws ParseError (with the 1-based line) on unknown axes, malformed or
/// duplicate lines.
RuleSet parse_rules(std::string_view text);

}  // namespace slim
