#include "slim/snr.hpp"

#include <algorithm>
#include <sstream>

#include "slim/errors.hpp"
#include "slim/io_util.hpp"

namespace slim {

double snr_k(const Tensor& v, Axes k, double eps_snr) {
  if (k == Axes::None) throw ContractError("SNR is undefined without a reduction (k = none)");
  if (!(eps_snr >= 0.0)) throw ContractError("eps_snr must be non-negative");
  const Tensor mean = mean_along(v, k);
  const Tensor var = var_along(v, k);
  double acc = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) acc += mean[i] * mean[i] / (var[i] + eps_snr);
  return acc / static_cast<double>(mean.size());
}

std::vector<std::int64_t> measurement_grid(std::int64_t total) {
  std::vector<std::int64_t> grid;
  if (total <= 0) return grid;
  const std::int64_t dense = std::max<std::int64_t>(1, total / 100);
  const std::int64_t sparse = std::max<std::int64_t>(1, total / 10);
  for (std::int64_t s = dense; s <= sparse; s += dense) grid.push_back(s);
  for (std::int64_t s = 2 * sparse; s <= total; s += sparse) grid.push_back(s);
  return grid;
}

void SnrTrajectory::record(std::int64_t t, std::span<const SnrSource> blocks, double eps_snr) {
  if (!grid_.empty() && !std::binary_search(grid_.begin(), grid_.end(), t)) {
    throw ContractError("step " + std::to_string(t) + " is not on the measurement grid");
  }
  if (!steps_.empty() && t <= steps_.back()) {
    throw ContractError("duplicate or out-of-order SNR step " + std::to_string(t));
  }
  std::vector<std::string_view> names;
  for (const SnrSource& b : blocks) names.push_back(b.name);
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw ContractError("duplicate block in SNR record at step " + std::to_string(t));
  }

  std::vector<std::vector<SnrSample>> per_block(blocks.size());
  const auto n = static_cast<std::ptrdiff_t>(blocks.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const SnrSource& b = blocks[static_cast<std::size_t>(i)];
    auto& out = per_block[static_cast<std::size_t>(i)];
    const bool matrix = b.v->rank() == 2;
    for (Axes k : {Axes::FanOut, Axes::FanIn, Axes::Both}) {
      if (!matrix && k != Axes::Both) continue;
      out.push_back(SnrSample{t, std::string(b.name), b.layer_type, b.depth, k, snr_k(*b.v, k, eps_snr)});
    }
  }
  std::vector<SnrSample> merged;
  for (auto& group : per_block) {
    for (auto& s : group) merged.push_back(std::move(s));
  }
  std::sort(merged.begin(), merged.end(), [](const SnrSample& a, const SnrSample& b) {
    return std::tie(a.block, a.k) < std::tie(b.block, b.k);
  });
  steps_.push_back(t);
  for (auto& s : merged) samples_.push_back(std::move(s));
}

void SnrTrajectory::append(SnrSample sample) {
  if (!steps_.empty() && sample.step < steps_.back()) {
    throw ContractError("SNR samples must be in step order");
  }
  for (auto it = samples_.rbegin(); it != samples_.rend() && it->step == sample.step; ++it) {
    if (it->block == sample.block && it->k == sample.k) {
      throw ContractError("duplicate SNR sample for `" + sample.block + "` at step " + std::to_string(sample.step));
    }
  }
  if (steps_.empty() || steps_.back() != sample.step) steps_.push_back(sample.step);
  samples_.push_back(std::move(sample));
}

AveragedSnr averaged_snr(const SnrTrajectory& trajectory) {
  if (trajectory.empty()) throw InputError("averaged_snr: empty trajectory");
  std::map<BlockAxes, std::pair<double, std::size_t>> acc;
  for (const SnrSample& s : trajectory.samples()) {
    auto& [total, count] = acc[{s.block, s.k}];
    total += s.snr;
    ++count;
  }
  AveragedSnr out;
  for (const auto& [key, tc] : acc) out[key] = tc.first / static_cast<double>(tc.second);
  return out;
}

DepthAveragedSnr depth_averaged_snr(const AveragedSnr& averaged, const Census& taxonomy) {
  std::map<std::string, LayerType, std::less<>> types;
  for (const CensusEntry& e : taxonomy) types[e.name] = e.layer_type;
  std::map<TypeAxes, std::pair<double, std::size_t>> acc;
  for (const auto& [key, value] : averaged) {
    const auto it = types.find(key.first);
    if (it == types.end()) throw InputError("block `" + key.first + "` missing from the census");
    auto& [total, count] = acc[{it->second, key.second}];
    total += value;
    ++count;
  }
  DepthAveragedSnr out;
  for (const auto& [key, tc] : acc) out[key] = tc.first / static_cast<double>(tc.second);
  return out;
}

std::string format_snr_csv(const SnrTrajectory& trajectory) {
  std::ostringstream os;
  os << "step,block,layer_type,depth,k,snr\n";
  for (const SnrSample& s : trajectory.samples()) {
    os << s.step << ',' << s.block << ',' << to_string(s.layer_type) << ',' << s.depth << ','
       << to_string(s.k) << ',' << format_double(s.snr) << '\n';
  }
  return os.str();
}

SnrTrajectory parse_snr_csv(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line) || line != "step,block,layer_type,depth,k,snr") {
    throw ParseError(1, "expected header `step,block,layer_type,depth,k,snr`");
  }
  ++line_no;
  SnrTrajectory out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError(line_no, "expected 6 columns");
    const auto step = parse_int(cells[0]);
    const auto type = parse_layer_type(cells[2]);
    const auto depth = parse_int(cells[3]);
    const auto k = parse_axes(cells[4]);
    const auto snr = parse_double(cells[5]);
    if (!step || !type || !depth || !k || !snr) throw ParseError(line_no, "malformed SNR row");
    try {
      out.append(SnrSample{*step, cells[1], *type, static_cast<int>(*depth), *k, *snr});
    } catch (const ContractError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace slim
