#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "slim/autodiff.hpp"
#include "slim/tensor.hpp"

namespace slim {

enum class LayerType {
  TokEmbd,
  LMHead,
  AttnKey,
  AttnQuery,
  AttnValue,
  AttnProj,
  MLPUp,
  MLPDown,
  AttnLN,
  MLPLN,
  FinalLN,
  PosEmbd,
  Generic,
};

std::string_view to_string(LayerType t);
std::optional<LayerType> parse_layer_type(std::string_view token);
bool is_norm(LayerType t) noexcept;
/// Token embedding and LM head: their fan_out axis indexes the vocabulary.
bool has_token_dim(LayerType t) noexcept;

/// A named parameter tensor. A tied block carries no storage of its own and
/// aliases the block named by `tied_to` (weights and optimizer state).
struct ParamBlock {
  std::string name;
  LayerType layer_type = LayerType::Generic;
  int depth = 0;
  Tensor weights;
  std::optional<std::string> tied_to;

  bool tied() const noexcept { return tied_to.has_value(); }
};

enum class ModelKind { LinearTokenModel, MLPClassifier, MiniTransformer };
enum class InitScheme { Mitchell, Default };

std::string_view to_string(ModelKind k);
std::optional<ModelKind> parse_model_kind(std::string_view token);
std::string_view to_string(InitScheme s);
std::optional<InitScheme> parse_init_scheme(std::string_view token);

struct ModelSpec {
  ModelKind kind = ModelKind::MiniTransformer;
  /// Vocabulary size; number of classes for MLPClassifier.
  std::size_t vocab = 256;
  /// Embedding width; hidden width for MLPClassifier.
  std::size_t d_model = 64;
  /// Transformer blocks; hidden layers for MLPClassifier.
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t context = 32;
  bool weight_tying = true;
  InitScheme init = InitScheme::Mitchell;
  double init_std = 0.02;
  /// Feature count for MLPClassifier inputs.
  std::size_t input_dim = 8;

  /// Throws InputError on an inconsistent spec.
  void validate() const;
};

/// Next-token batch: `batch` sequences of `context` tokens, row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t context = 0;
  std::vector<std::uint32_t> inputs;
  std::vector<std::uint32_t> targets;
};

/// Classification batch: one feature row per sample.
struct FeatureBatch {
  Tensor features;
  std::vector<std::uint32_t> labels;
};

using Batch = std::variant<TokenBatch, FeatureBatch>;

/// One line of the census manifest. Vectors have fan_in == 0.
struct CensusEntry {
  std::string name;
  LayerType layer_type = LayerType::Generic;
  int depth = 0;
  std::size_t fan_out = 0;
  std::size_t fan_in = 0;
  std::optional<std::string> tied_to;

  bool is_matrix() const noexcept { return fan_in > 0; }
  std::size_t numel() const noexcept { return is_matrix() ? fan_out * fan_in : fan_out; }
  bool operator==(const CensusEntry&) const = default;
};

using Census = std::vector<CensusEntry>;

/// Block layout a spec would produce, without allocating weights.
Census census_of(const ModelSpec& spec);

/// GPT-2 small (124M) in this model's layout: 12 layers, d_model 768, padded
/// vocabulary 50304, context 1024, tied embedding. Useful for census-only work.
ModelSpec gpt2_small_spec();
/// Text manifest, one `name layer_type depth fan_out fan_in tied_to` line per
/// block; `-` marks a vector's fan_in and an absent tie.
std::string format_census(const Census& census);
Census parse_census(std::string_view text);

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, std::vector<ParamBlock> blocks);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::span<const ParamBlock> blocks() const noexcept { return blocks_; }
  std::span<ParamBlock> blocks() noexcept { return blocks_; }

  /// Index of the named block; throws InputError if absent.
  std::size_t index_of(std::string_view name) const;
  /// Index of the block holding storage for block `i` (itself unless tied).
  std::size_t owner_of(std::size_t i) const;
  const Tensor& weights(std::size_t i) const { return blocks_[owner_of(i)].weights; }

  Census census() const;

  /// Records the loss on `tape`. `leaves[i]` is the parameter node for block i
  /// (tied blocks share their owner's node).
  struct Graph {
    NodeId loss;
    std::vector<NodeId> leaves;
  };
  Graph record(Tape& tape, const Batch& batch) const;

  /// Logits for a token batch, (batch·context) × vocab.
  Tensor logits(const TokenBatch& batch) const;

 private:
  NodeId record_transformer(Tape& tape, const TokenBatch& batch, std::span<const NodeId> leaves) const;
  NodeId record_linear_token(Tape& tape, const TokenBatch& batch, std::span<const NodeId> leaves) const;
  NodeId record_mlp(Tape& tape, const FeatureBatch& batch, std::span<const NodeId> leaves) const;
  NodeId record_logits(Tape& tape, const Batch& batch, std::span<const NodeId> leaves) const;

  ModelSpec spec_;
  std::vector<ParamBlock> blocks_;
};

/// Deterministic in (spec, seed).
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Mean cross-entropy over every position (or sample) in the batch.
double forward_loss(const Model& model, const Batch& batch);

struct LossAndGrads {
  double loss = 0.0;
  /// One gradient per block; empty for tied aliases, whose gradient is folded
  /// into the owner.
  std::vector<Tensor> grads;
};
LossAndGrads loss_and_grads(const Model& model, const Batch& batch);

/// Finite-difference check of loss_and_grads over sampled coordinates of every
/// stored parameter.
double grad_check(const Model& model, const Batch& batch, const GradCheckOptions& options = {});

}  // namespace slim
