#include "slim/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "slim/errors.hpp"
#include "slim/io_util.hpp"

namespace slim {
namespace {

// 53 random mantissa bits from the generator, independent of the standard
// library's distribution implementations.
double unit_interval(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

void ZipfStream::validate() const {
  if (vocab == 0) throw InputError("zipf stream: vocab must be at least 1");
  if (!(alpha >= 0.0)) throw InputError("zipf stream: alpha must be non-negative");
}

std::vector<double> zipf_probabilities(std::size_t vocab, double alpha) {
  if (vocab == 0) throw InputError("zipf: vocab must be at least 1");
  std::vector<double> p(vocab);
  for (std::size_t t = 0; t < vocab; ++t) p[t] = std::pow(static_cast<double>(t + 1), -alpha);
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= z;
  return p;
}

std::vector<std::uint32_t> zipf_token_stream(const ZipfStream& spec) {
  spec.validate();
  const std::vector<double> p = zipf_probabilities(spec.vocab, spec.alpha);
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  cdf.back() = 1.0;
  std::mt19937_64 rng(spec.seed);
  std::vector<std::uint32_t> out(spec.length);
  for (auto& tok : out) {
    const double u = unit_interval(rng);
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    tok = static_cast<std::uint32_t>(std::min<std::size_t>(it - cdf.begin(), spec.vocab - 1));
  }
  return out;
}

BatchStream::BatchStream(std::vector<std::uint32_t> tokens, std::size_t context, std::size_t batch,
                         std::uint64_t seed)
    : tokens_(std::move(tokens)), context_(context), batch_(batch), rng_(seed) {
  if (context_ == 0 || batch_ == 0) throw InputError("batch stream: context and batch must be positive");
  if (tokens_.size() < context_ + 1) {
    throw InputError("stream of " + std::to_string(tokens_.size()) + " tokens is shorter than context + 1");
  }
  if (batches_per_epoch() == 0) throw InputError("stream too short for a single batch");
  order_.resize(windows());
  reshuffle();
}

void BatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  // Fisher-Yates with our own index draw so the order is stable across
  // standard library implementations.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_interval(rng_) * static_cast<double>(i));
    std::swap(order_[i - 1], order_[std::min(j, i - 1)]);
  }
  cursor_ = 0;
}

TokenBatch BatchStream::next() {
  if (cursor_ + batch_ > order_.size()) reshuffle();
  TokenBatch b{batch_, context_, {}, {}};
  b.inputs.reserve(batch_ * context_);
  b.targets.reserve(batch_ * context_);
  for (std::size_t s = 0; s < batch_; ++s) {
    const std::size_t start = order_[cursor_++] * context_;
    b.inputs.insert(b.inputs.end(), tokens_.begin() + start, tokens_.begin() + start + context_);
    b.targets.insert(b.targets.end(), tokens_.begin() + start + 1, tokens_.begin() + start + context_ + 1);
  }
  return b;
}

std::vector<TokenBatch> sequential_batches(std::span<const std::uint32_t> tokens, std::size_t context,
                                           std::size_t batch, std::size_t max_batches) {
  if (context == 0 || batch == 0) throw InputError("sequential_batches: context and batch must be positive");
  if (tokens.size() < context + 1) throw InputError("held-out stream is shorter than context + 1");
  const std::size_t windows = (tokens.size() - 1) / context;
  const std::size_t count = std::min(max_batches, windows / batch);
  if (count == 0) throw InputError("held-out stream too short for a single batch");
  std::vector<TokenBatch> out;
  for (std::size_t b = 0; b < count; ++b) {
    TokenBatch tb{batch, context, {}, {}};
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t start = (b * batch + s) * context;
      tb.inputs.insert(tb.inputs.end(), tokens.begin() + start, tokens.begin() + start + context);
      tb.targets.insert(tb.targets.end(), tokens.begin() + start + 1, tokens.begin() + start + context + 1);
    }
    out.push_back(std::move(tb));
  }
  return out;
}

Split split_stream(std::span<const std::uint32_t> tokens, double heldout_fraction) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) throw InputError("heldout fraction must be in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(tokens.size()) * (1.0 - heldout_fraction)));
  return Split{{tokens.begin(), tokens.begin() + cut}, {tokens.begin() + cut, tokens.end()}};
}

void write_token_file(const std::filesystem::path& path, const ZipfStream& spec,
                      std::span<const std::uint32_t> tokens) {
  std::string blob = std::to_string(spec.vocab) + "," + std::to_string(tokens.size()) + "," +
                     format_double(spec.alpha) + "," + std::to_string(spec.seed) + "\n";
  blob.reserve(blob.size() + 4 * tokens.size());
  for (std::uint32_t t : tokens) {
    for (int byte = 0; byte < 4; ++byte) blob.push_back(static_cast<char>((t >> (8 * byte)) & 0xFFu));
  }
  write_file(path, blob);
}

TokenFile read_token_file(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  const auto eol = blob.find('\n');
  if (eol == std::string::npos) throw ParseError(1, "token file has no header line");
  std::vector<std::string> fields;
  std::istringstream header(blob.substr(0, eol));
  std::string f;
  while (std::getline(header, f, ',')) fields.push_back(f);
  if (fields.size() != 4) throw ParseError(1, "expected header `vocab,length,alpha,seed`");
  const auto vocab = parse_int(fields[0]);
  const auto length = parse_int(fields[1]);
  const auto alpha = parse_double(fields[2]);
  const auto seed = parse_int(fields[3]);
  if (!vocab || !length || !alpha || !seed || *vocab < 0 || *length < 0) throw ParseError(1, "malformed header");
  const std::size_t n = static_cast<std::size_t>(*length);
  if (blob.size() - eol - 1 != 4 * n) throw ParseError(1, "payload size does not match header length");
  TokenFile out{ZipfStream{static_cast<std::size_t>(*vocab), *alpha, n, static_cast<std::uint64_t>(*seed)}, {}};
  out.tokens.resize(n);
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data() + eol + 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t t = 0;
    for (int byte = 0; byte < 4; ++byte) t |= static_cast<std::uint32_t>(bytes[4 * i + byte]) << (8 * byte);
    out.tokens[i] = t;
  }
  return out;
}

FeatureBatch make_blobs(std::size_t samples, std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
  if (samples == 0 || input_dim == 0 || classes == 0) throw InputError("make_blobs: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> centres(classes * input_dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (std::size_t j = 0; j < input_dim; ++j) {
      centres[c * input_dim + j] = normal(rng);
      norm += centres[c * input_dim + j] * centres[c * input_dim + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < input_dim; ++j) centres[c * input_dim + j] *= 4.0 / norm;
  }
  FeatureBatch out{Tensor(Shape(samples, input_dim)), std::vector<std::uint32_t>(samples)};
  for (std::size_t i = 0; i < samples; ++i) {
    const auto label = static_cast<std::uint32_t>(i % classes);
    out.labels[i] = label;
    for (std::size_t j = 0; j < input_dim; ++j) {
      out.features(i, j) = centres[label * input_dim + j] + 0.5 * normal(rng);
    }
  }
  return out;
}

CharCorpus make_char_corpus(std::string_view text) {
  if (text.empty()) throw InputError("corpus is empty");
  std::array<bool, 256> seen{};
  for (char ch : text) seen[static_cast<unsigned char>(ch)] = true;
  CharCorpus out;
  std::array<std::uint32_t, 256> index{};
  for (std::size_t b = 0; b < 256; ++b) {
    if (seen[b]) {
      index[b] = static_cast<std::uint32_t>(out.alphabet.size());
      out.alphabet.push_back(static_cast<char>(b));
    }
  }
  out.tokens.reserve(text.size());
  for (char ch : text) out.tokens.push_back(index[static_cast<unsigned char>(ch)]);
  return out;
}

}  // namespace slim
