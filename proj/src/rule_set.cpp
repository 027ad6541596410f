#include "slim/rule_set.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

#include "slim/errors.hpp"
#include "slim/io_util.hpp"

namespace slim {
namespace {

std::string_view kind_name(Provenance::Kind k) {
  switch (k) {
    case Provenance::Kind::Manual: return "manual";
    case Provenance::Kind::Baseline: return "baseline";
    case Provenance::Kind::Derived: return "derived";
  }
  return "manual";
}

constexpr std::string_view kProvenanceTag = "# provenance";

constexpr std::string_view kSourceField = " source=";

// `source=` comes last and runs to the end of the line, so it may hold spaces.
Provenance parse_provenance(std::string_view line, std::size_t line_no) {
  std::string_view head = line.substr(kProvenanceTag.size());
  std::optional<std::string> source;
  if (const auto at = head.find(kSourceField); at != std::string_view::npos) {
    source = std::string(head.substr(at + kSourceField.size()));
    head = head.substr(0, at);
  }
  std::istringstream is{std::string(head)};
  std::string kind;
  is >> kind;
  Provenance p;
  if (kind == "baseline") {
    p.kind = Provenance::Kind::Baseline;
  } else if (kind == "derived") {
    p.kind = Provenance::Kind::Derived;
  } else if (kind == "manual") {
    p.kind = Provenance::Kind::Manual;
  } else {
    throw ParseError(line_no, "unknown provenance `" + kind + "`");
  }
  std::string field;
  while (is >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "malformed provenance field `" + field + "`");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "cutoff" || key == "lr") {
      const auto parsed = parse_double(value);
      if (!parsed) throw ParseError(line_no, "bad number `" + value + "`");
      (key == "cutoff" ? p.cutoff : p.lr) = *parsed;
    } else {
      throw ParseError(line_no, "unknown provenance field `" + key + "`");
    }
  }
  if (source) p.source = *source;
  return p;
}

}  // namespace

void RuleSet::set(std::string block, Axes k) {
  if (find(block)) throw InputError("duplicate rule for block `" + block + "`");
  entries_.emplace_back(std::move(block), k);
}

std::optional<Axes> RuleSet::find(std::string_view block) const {
  const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == block; });
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string serialize_rules(const RuleSet& rules) {
  std::ostringstream os;
  const Provenance& p = rules.provenance();
  if (p != Provenance{}) {
    os << kProvenanceTag << ' ' << kind_name(p.kind);
    if (p.source.find('\n') != std::string::npos) throw InputError("provenance source spans lines");
    os << " cutoff=" << format_double(p.cutoff) << " lr=" << format_double(p.lr);
    if (!p.source.empty()) os << kSourceField << p.source;
    os << '\n';
  }
  for (const auto& [name, k] : rules.entries()) os << name << ' ' << to_string(k) << '\n';
  return os.str();
}

RuleSet parse_rules(std::string_view text) {
  RuleSet rules;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.starts_with(kProvenanceTag)) {
      rules.set_provenance(parse_provenance(line, line_no));
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string name, axes, extra;
    if (!(fields >> name >> axes) || (fields >> extra)) {
      throw ParseError(line_no, "expected `name axes`");
    }
    const auto k = parse_axes(axes);
    if (!k) throw ParseError(line_no, "unknown axes `" + axes + "`");
    if (rules.find(name)) throw ParseError(line_no, "duplicate rule for `" + name + "`");
    rules.set(name, *k);
  }
  return rules;
}

}  // namespace slim
