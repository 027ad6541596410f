#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slim/model.hpp"

namespace slim {

/// I.i.d. tokens with P(t) ∝ (t + 1)^-alpha over [0, vocab).
struct ZipfStream {
  std::size_t vocab = 256;
  double alpha = 1.0;
  std::size_t length = 100000;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ZipfStream&) const = default;
};

/// Exactly normalised target probabilities.
std::vector<double> zipf_probabilities(std::size_t vocab, double alpha);

/// Deterministic in the spec. Throws InputError for vocab 0.
std::vector<std::uint32_t> zipf_token_stream(const ZipfStream& spec);

/// Shuffled, non-overlapping next-token windows over a token stream. Window i
/// covers tokens [i·context, i·context + context]; targets are inputs shifted
/// by one. Reshuffles with a fresh permutation at each epoch boundary.
class BatchStream {
 public:
  /// Throws InputError if the stream cannot fill one batch.
  BatchStream(std::vector<std::uint32_t> tokens, std::size_t context, std::size_t batch, std::uint64_t seed);

  std::size_t windows() const noexcept { return (tokens_.size() - 1) / context_; }
  std::size_t batches_per_epoch() const noexcept { return windows() / batch_; }

  TokenBatch next();

 private:
  void reshuffle();

  std::vector<std::uint32_t> tokens_;
  std::size_t context_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Consecutive windows of the stream, in order, as at most `max_batches` batches.
std::vector<TokenBatch> sequential_batches(std::span<const std::uint32_t> tokens, std::size_t context,
                                           std::size_t batch, std::size_t max_batches);

struct Split {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> heldout;
};

/// The last `heldout_fraction` of the stream is held out.
Split split_stream(std::span<const std::uint32_t> tokens, double heldout_fraction);

/// Token file: a text header line `vocab,length,alpha,seed` then little-endian
/// 32-bit ids.
void write_token_file(const std::filesystem::path& path, const ZipfStream& spec,
                      std::span<const std::uint32_t> tokens);

struct TokenFile {
  ZipfStream spec;
  std::vector<std::uint32_t> tokens;
};
TokenFile read_token_file(const std::filesystem::path& path);

/// Gaussian clusters around well-separated random centres, one per class.
FeatureBatch make_blobs(std::size_t samples, std::size_t input_dim, std::size_t classes, std::uint64_t seed);

/// Byte-level vocabulary over a plain-text corpus: token ids index the sorted
/// set of distinct bytes.
struct CharCorpus {
  std::string alphabet;
  std::vector<std::uint32_t> tokens;
};
CharCorpus make_char_corpus(std::string_view text);

}  // namespace slim
