#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slim/model.hpp"
#include "slim/tensor.hpp"

namespace slim {

constexpr double kDefaultSnrEps = 1e-12;

/// mean_K(V)² / (var_K(V) + eps_snr), averaged over the axes not in K.
/// Throws ContractError for K = None.
double snr_k(const Tensor& v, Axes k, double eps_snr = kDefaultSnrEps);

struct SnrSample {
  std::int64_t step = 0;
  std::string block;
  LayerType layer_type = LayerType::Generic;
  int depth = 0;
  Axes k = Axes::Both;
  double snr = 0.0;

  bool operator==(const SnrSample&) const = default;
};

/// A block whose second moment is measured at one step.
struct SnrSource {
  std::string_view name;
  LayerType layer_type = LayerType::Generic;
  int depth = 0;
  const Tensor* v = nullptr;
};

/// Steps at which SNR is measured for a run of `total` steps: every total/100
/// steps up to total/10, then every total/10 steps up to total.
std::vector<std::int64_t> measurement_grid(std::int64_t total);

class SnrTrajectory {
 public:
  SnrTrajectory() = default;
  /// Restricts record() to the given steps.
  explicit SnrTrajectory(std::vector<std::int64_t> grid) : grid_(std::move(grid)) {}

  /// Appends samples for step t: FanOut, FanIn and Both for matrices, Both
  /// for vectors. Within a step samples are ordered by block name, then k.
  /// Throws ContractError for off-grid or non-increasing steps and for
  /// duplicate blocks.
  void record(std::int64_t t, std::span<const SnrSource> blocks, double eps_snr = kDefaultSnrEps);

  /// Appends one already-computed sample (used by the CSV reader).
  void append(SnrSample sample);

  const std::vector<SnrSample>& samples() const noexcept { return samples_; }
  const std::vector<std::int64_t>& steps() const noexcept { return steps_; }
  bool empty() const noexcept { return samples_.empty(); }

  bool operator==(const SnrTrajectory& other) const { return samples_ == other.samples_; }

 private:
  std::vector<std::int64_t> grid_;
  std::vector<std::int64_t> steps_;
  std::vector<SnrSample> samples_;
};

using BlockAxes = std::pair<std::string, Axes>;
using AveragedSnr = std::map<BlockAxes, double>;
using TypeAxes = std::pair<LayerType, Axes>;
using DepthAveragedSnr = std::map<TypeAxes, double>;

/// Mean of each (block, k) series over its measurement steps. Throws
/// InputError on an empty trajectory.
AveragedSnr averaged_snr(const SnrTrajectory& trajectory);

/// Mean over all blocks of the same layer type, per k. Layer types come from
/// `taxonomy`; tied aliases resolve to their owner's entry.
DepthAveragedSnr depth_averaged_snr(const AveragedSnr& averaged, const Census& taxonomy);

/// `step,block,layer_type,depth,k,snr` with a header row.
std::string format_snr_csv(const SnrTrajectory& trajectory);
SnrTrajectory parse_snr_csv(std::string_view text);

}  // namespace slim
