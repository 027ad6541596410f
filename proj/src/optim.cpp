#include "slim/optim.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <sstream>

#include "slim/errors.hpp"

namespace slim {

void Hyper::validate() const {
  if (!(lr > 0.0)) throw InputError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InputError("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InputError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be non-negative");
  if (clip_norm && !(*clip_norm > 0.0)) throw InputError("clip_norm must be positive");
}

void Schedule::validate() const {
  if (!(peak_lr > 0.0)) throw InputError("schedule peak lr must be positive");
  if (!(0 < warmup && warmup < total)) throw InputError("schedule needs 0 < warmup < total");
}

double lr_at(const Schedule& s, std::int64_t t) {
  if (t < 0 || t > s.total) {
    throw InputError("step " + std::to_string(t) + " outside schedule [0, " + std::to_string(s.total) + "]");
  }
  if (t <= s.warmup) return s.peak_lr * static_cast<double>(t) / static_cast<double>(s.warmup);
  const double progress = static_cast<double>(t - s.warmup) / static_cast<double>(s.total - s.warmup);
  const double lo = s.floor_lr();
  return lo + (s.peak_lr - lo) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be positive");
  double total = 0.0;
  for (const Tensor& g : grads) {
    double sq = 0.0;
    for (double x : g.data()) sq += x * x;
    total += sq;
  }
  const double norm = std::sqrt(total);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) {
      for (double& x : g.data()) x *= factor;
    }
  }
  return norm;
}

MomentState MomentState::zeros(const Shape& shape, Axes k) {
  return MomentState{Tensor(shape), Tensor(reduced_shape(shape, k)), k};
}

void shared_moment_step(MomentState& state, Tensor& w, const Tensor& g, const Hyper& hyper,
                        double lr_t, std::int64_t t, double weight_decay, std::string_view block) {
  if (g.shape() != w.shape() || state.m.shape() != w.shape()) {
    throw ShapeError("shared_moment_step: gradient/moment shape mismatch for block `" + std::string(block) + "`");
  }
  if (state.v.shape() != reduced_shape(w.shape(), state.k)) {
    throw ShapeError("shared_moment_step: second moment has wrong shape for block `" + std::string(block) + "`");
  }
  if (t < 1) throw ContractError("shared_moment_step: step counter must start at 1");

  const double b1 = hyper.beta1;
  const double b2 = hyper.beta2;
  auto m = state.m.data();
  auto v = state.v.data();
  auto wd = w.data();
  const auto gd = g.data();

  for (std::size_t i = 0; i < m.size(); ++i) m[i] = b1 * m[i] + (1.0 - b1) * gd[i];

  const Tensor reduced = mean_along(square(g), state.k);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = b2 * v[i] + (1.0 - b2) * reduced[i];

  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double eps = hyper.eps;
  const std::size_t cols = w.cols();
  const Axes k = state.k;
  const auto n = static_cast<std::ptrdiff_t>(wd.size());

#pragma omp parallel for schedule(static) if (n > (1 << 15))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    std::size_t vi = u;
    switch (k) {
      case Axes::None: vi = u; break;
      case Axes::FanIn: vi = u / cols; break;
      case Axes::FanOut: vi = u % cols; break;
      case Axes::Both: vi = 0; break;
    }
    const double mhat = m[u] / bc1;
    const double vhat = v[vi] / bc2;
    wd[u] = wd[u] - lr_t * (mhat / (std::sqrt(vhat) + eps)) - lr_t * weight_decay * wd[u];
  }

  if (!all_finite(w)) throw DivergenceError("non-finite update in block `" + std::string(block) + "`");
}

std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::Adam: return "adam";
    case Baseline::AdaLayer: return "adalayer";
    case Baseline::AdaLayerLnTl: return "adalayer_ln_tl";
    case Baseline::AdaminiV2: return "adamini_v2";
  }
  return "adam";
}

std::optional<Baseline> parse_baseline(std::string_view token) {
  for (Baseline b : {Baseline::Adam, Baseline::AdaLayer, Baseline::AdaLayerLnTl, Baseline::AdaminiV2}) {
    if (to_string(b) == token) return b;
  }
  return std::nullopt;
}

RuleSet make_baseline_rules(const Census& census, Baseline variant) {
  RuleSet rules(Provenance{Provenance::Kind::Baseline, std::string(to_string(variant)), 0.0, 0.0});
  for (const CensusEntry& e : census) {
    if (e.tied_to) continue;
    Axes k = Axes::None;
    switch (variant) {
      case Baseline::Adam: k = Axes::None; break;
      case Baseline::AdaLayer: k = Axes::Both; break;
      case Baseline::AdaLayerLnTl:
        k = (is_norm(e.layer_type) || has_token_dim(e.layer_type)) ? Axes::None : Axes::Both;
        break;
      case Baseline::AdaminiV2:
        // One moment per output neuron; LayerNorms always share one.
        if (is_norm(e.layer_type)) {
          k = Axes::Both;
        } else {
          k = e.is_matrix() ? Axes::FanIn : Axes::None;
        }
        break;
    }
    rules.set(e.name, k);
  }
  return rules;
}

RuleSet make_baseline_rules(const Census& census, std::string_view variant) {
  const auto b = parse_baseline(variant);
  if (!b) throw InputError("unknown baseline variant `" + std::string(variant) + "`");
  return make_baseline_rules(census, *b);
}

SharedMomentAdam::SharedMomentAdam(const Model& model, const RuleSet& rules, Hyper hyper) : hyper_(hyper) {
  hyper_.validate();
  const auto blocks = model.blocks();
  for (const auto& [name, k] : rules.entries()) {
    const std::size_t i = model.index_of(name);
    if (blocks[i].tied()) {
      throw InputError("rule for tied block `" + name + "`; use its owner `" + *blocks[i].tied_to + "`");
    }
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].tied()) continue;
    const Shape& shape = blocks[i].weights.shape();
    const Axes k = rules.at(blocks[i].name);
    if (!axes_valid_for(k, shape.rank())) {
      throw ShapeError("axes " + std::string(to_string(k)) + " invalid for block `" + blocks[i].name + "`");
    }
    const double decay = (shape.rank() == 2 || hyper_.decay_vectors) ? hyper_.weight_decay : 0.0;
    slots_.push_back(Slot{i, blocks[i].name, MomentState::zeros(shape, k), decay});
  }
}

double SharedMomentAdam::step(Model& model, std::vector<Tensor>& grads, double lr_t) {
  if (grads.size() != model.blocks().size()) throw ShapeError("step: one gradient per block required");
  ++t_;
  double norm = 0.0;
  if (hyper_.clip_norm) {
    std::vector<Tensor> owned;
    owned.reserve(slots_.size());
    for (const Slot& s : slots_) owned.push_back(std::move(grads[s.block]));
    norm = clip_grad_norm(owned, *hyper_.clip_norm);
    for (std::size_t j = 0; j < slots_.size(); ++j) grads[slots_[j].block] = std::move(owned[j]);
  } else {
    for (const Slot& s : slots_) {
      if (!all_finite(grads[s.block])) throw DivergenceError("non-finite gradient in block `" + s.name + "`");
    }
  }
  for (Slot& s : slots_) {
    shared_moment_step(s.state, model.blocks()[s.block].weights, grads[s.block], hyper_, lr_t, t_,
                       s.weight_decay, s.name);
  }
  return norm;
}

const MomentState& SharedMomentAdam::state(std::string_view block) const {
  for (const Slot& s : slots_) {
    if (s.name == block) return s.state;
  }
  throw InputError("no optimizer state for block `" + std::string(block) + "`");
}

std::size_t SharedMomentAdam::second_moment_entries() const {
  std::size_t n = 0;
  for (const Slot& s : slots_) n += s.state.v.size();
  return n;
}

namespace {

void write_values(std::ostringstream& os, std::span<const double> values) {
  char buf[64];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a", values[i]);
    os << (i == 0 ? "" : " ") << buf;
  }
  os << '\n';
}

void read_values(std::istringstream& is, std::span<double> out, std::size_t line_no) {
  std::string token;
  for (double& x : out) {
    if (!(is >> token)) throw ParseError(line_no, "too few values");
    char* end = nullptr;
    x = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw ParseError(line_no, "bad value `" + token + "`");
  }
  if (is >> token) throw ParseError(line_no, "too many values");
}

}  // namespace

std::string SharedMomentAdam::checkpoint() const {
  std::ostringstream os;
  os << "slimadam-state 1\n";
  os << "t " << t_ << '\n';
  for (const Slot& s : slots_) {
    os << "block " << s.name << ' ' << to_string(s.state.k) << ' ' << s.state.m.size() << ' '
       << s.state.v.size() << '\n';
    write_values(os, s.state.m.data());
    write_values(os, s.state.v.data());
  }
  return os.str();
}

void SharedMomentAdam::restore(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  const auto next = [&]() -> std::istringstream {
    if (!std::getline(is, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    return std::istringstream(line);
  };

  if (next().str() != "slimadam-state 1") throw ParseError(line_no, "not a slimadam-state v1 dump");
  std::int64_t t = 0;
  {
    auto fields = next();
    std::string tag;
    if (!(fields >> tag >> t) || tag != "t" || t < 0) throw ParseError(line_no, "expected `t <step>`");
  }
  std::vector<MomentState> loaded;
  for (const Slot& s : slots_) {
    auto header = next();
    std::string tag, name, axes;
    std::size_t m_len = 0, v_len = 0;
    if (!(header >> tag >> name >> axes >> m_len >> v_len) || tag != "block") {
      throw ParseError(line_no, "expected `block name axes m_len v_len`");
    }
    if (name != s.name) throw ParseError(line_no, "expected block `" + s.name + "`, found `" + name + "`");
    const auto k = parse_axes(axes);
    if (!k || *k != s.state.k) throw ParseError(line_no, "axes mismatch for block `" + name + "`");
    if (m_len != s.state.m.size() || v_len != s.state.v.size()) {
      throw ParseError(line_no, "size mismatch for block `" + name + "`");
    }
    MomentState st = MomentState::zeros(s.state.m.shape(), s.state.k);
    auto m_line = next();
    read_values(m_line, st.m.data(), line_no);
    auto v_line = next();
    read_values(v_line, st.v.data(), line_no);
    loaded.push_back(std::move(st));
  }
  for (std::size_t j = 0; j < slots_.size(); ++j) slots_[j].state = std::move(loaded[j]);
  t_ = t;
}

}  // namespace slim
