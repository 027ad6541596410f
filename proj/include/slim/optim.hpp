#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slim/model.hpp"
#include "slim/rule_set.hpp"
#include "slim/tensor.hpp"

namespace slim {

/// Optimizer hyperparameters. Defaults are the pre-training profile; the
/// fine-tuning profile uses beta2 = 0.999.
struct Hyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::optional<double> clip_norm = 1.0;
  /// Decay rank-1 blocks too. Off by default: only matrices are decayed.
  bool decay_vectors = false;

  void validate() const;
};

/// Linear warmup from zero to `peak_lr`, then cosine decay to peak_lr / 10.
struct Schedule {
  double peak_lr = 1e-3;
  std::int64_t warmup = 200;
  std::int64_t total = 2000;

  double floor_lr() const noexcept { return peak_lr / 10.0; }
  void validate() const;
};

/// Throws InputError for t outside [0, total].
double lr_at(const Schedule& s, std::int64_t t);

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm observed before scaling. Throws DivergenceError
/// on non-finite entries.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

/// First and (possibly shared) second moment of one parameter block.
struct MomentState {
  Tensor m;
  Tensor v;
  Axes k = Axes::None;

  static MomentState zeros(const Shape& shape, Axes k);
};

/// One shared-second-moment Adam update of `w` with gradient `g` at global
/// step `t` (t >= 1). `weight_decay` is applied decoupled, to W only. With
/// k = None this is AdamW exactly. Throws DivergenceError naming `block` if
/// the result is not finite.
void shared_moment_step(MomentState& state, Tensor& w, const Tensor& g, const Hyper& hyper,
                        double lr_t, std::int64_t t, double weight_decay,
                        std::string_view block = "");

enum class Baseline { Adam, AdaLayer, AdaLayerLnTl, AdaminiV2 };

std::string_view to_string(Baseline b);
std::optional<Baseline> parse_baseline(std::string_view token);

/// Named rule sets from the literature, over the census' stored blocks.
RuleSet make_baseline_rules(const Census& census, Baseline variant);
/// Throws InputError for an unknown variant name.
RuleSet make_baseline_rules(const Census& census, std::string_view variant);

/// Adam with per-block sharing dimensions taken from a RuleSet. Blocks without
/// a rule keep full second moments. Tied aliases share their owner's state.
class SharedMomentAdam {
 public:
  SharedMomentAdam(const Model& model, const RuleSet& rules, Hyper hyper);

  /// Clip, then update every stored block. Advances the global step first.
  /// `grads` is indexed like model.blocks(); alias entries are ignored.
  /// Returns the pre-clip gradient norm (0 when clipping is disabled).
  double step(Model& model, std::vector<Tensor>& grads, double lr_t);

  std::int64_t steps() const noexcept { return t_; }
  const Hyper& hyper() const noexcept { return hyper_; }

  struct Slot {
    std::size_t block = 0;
    std::string name;
    MomentState state;
    double weight_decay = 0.0;
  };
  std::span<const Slot> slots() const noexcept { return slots_; }
  const MomentState& state(std::string_view block) const;

  /// Stored second-moment entries across all blocks.
  std::size_t second_moment_entries() const;

  /// Text dump of t and every block's (name, k, M, V); values as hex floats
  /// so restore() reproduces them bit for bit.
  std::string checkpoint() const;
  /// Throws ParseError if the dump does not match this optimizer's blocks.
  void restore(std::string_view text);

 private:
  std::vector<Slot> slots_;
  Hyper hyper_;
  std::int64_t t_ = 0;
};

}  // namespace slim
