#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "slim/tensor.hpp"

namespace slim {

struct NodeId {
  std::size_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

enum class OpKind {
  Leaf,
  Constant,
  MatMul,      // a · b
  MatMulNT,    // a · bᵀ, i.e. a linear layer with (fan_out, fan_in) weights
  Add,
  Mul,
  Scale,
  AddRow,      // matrix + broadcast row vector
  Relu,
  Gelu,
  LayerNorm,
  CrossEntropy,
  Embedding,
  Slice,
  ConcatCols,
  ConcatRows,
  CausalSoftmax,
  Sum,
};

/// Append-only record of a forward computation. Nodes are created in
/// topological order by construction; gradients flow back in one pass.
class Tape {
 public:
  /// Differentiable input (a parameter).
  NodeId leaf(Tensor value);
  /// Non-differentiable input.
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId matmul_nt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_row(NodeId x, NodeId row);
  NodeId relu(NodeId x);
  /// tanh approximation
  NodeId gelu(NodeId x);
  /// Row-wise normalisation of x (N×d) with learnable gain and optional shift.
  NodeId layer_norm(NodeId x, NodeId gain, std::optional<NodeId> shift = std::nullopt,
                    double eps = 1e-5);
  /// Mean softmax cross-entropy of logits (N×C) against class ids; scalar.
  NodeId cross_entropy(NodeId logits, std::span<const std::uint32_t> targets);
  /// Rows of `table` picked by `ids`; backward is a dense scatter-add.
  NodeId embedding(NodeId table, std::span<const std::uint32_t> ids);
  NodeId slice(NodeId x, std::size_t row0, std::size_t n_rows, std::size_t col0, std::size_t n_cols);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId concat_rows(std::span<const NodeId> parts);
  /// Row softmax of a square score matrix with entries above the diagonal masked out.
  NodeId causal_softmax(NodeId scores);
  NodeId sum(NodeId x);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id.index).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<Tensor> saved;
    std::vector<std::uint32_t> ids;
    std::array<std::size_t, 4> geom{};
    double scalar = 0.0;
    bool needs_grad = false;
  };

  NodeId push(Node node);
  bool any_needs_grad(std::span<const NodeId> ids) const;

  std::vector<Node> nodes_;

  friend std::map<NodeId, Tensor> backward(const Tape& tape, NodeId loss);
};

/// Gradient of the scalar `loss` with respect to every leaf on the tape.
/// Leaves that do not reach the loss get zero tensors.
std::map<NodeId, Tensor> backward(const Tape& tape, NodeId loss);

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per parameter tensor (all of them if the tensor is smaller).
  std::size_t coords_per_param = 8;
  std::uint64_t seed = 0;
};

using LossFn = std::function<double(const std::vector<Tensor>&)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

/// Largest |analytic - central difference| / max(1, |analytic|, |numeric|) over
/// sampled coordinates of `params`. Zero when there is nothing to sample.
/// Throws DivergenceError if the loss is not finite.
double grad_check(const LossFn& loss, const GradFn& grad, std::vector<Tensor> params,
                  const GradCheckOptions& options = {});

}  // namespace slim
