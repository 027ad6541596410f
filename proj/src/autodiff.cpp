#include "slim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "slim/errors.hpp"
#include "slim/kernels.hpp"

namespace slim {
namespace {

constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + t.shape().str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

Tensor& grad_slot(std::vector<Tensor>& grads, NodeId id, const Shape& shape) {
  Tensor& g = grads[id.index];
  if (g.empty()) g = Tensor(shape);
  return g;
}

void add_into(Tensor& dst, std::span<const double> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

}  // namespace

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

bool Tape::any_needs_grad(std::span<const NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](NodeId id) { return nodes_.at(id.index).needs_grad; });
}

NodeId Tape::leaf(Tensor value) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_matrix(va, "matmul");
  require_matrix(vb, "matmul");
  if (va.cols() != vb.rows()) throw ShapeError("matmul: inner dims " + va.shape().str() + " x " + vb.shape().str());
  Node n;
  n.op = OpKind::MatMul;
  n.inputs = {a, b};
  n.value = Tensor(Shape(va.rows(), vb.cols()));
  kernels::gemm_nn(va.data(), vb.data(), n.value.data(), va.rows(), va.cols(), vb.cols());
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_matrix(va, "matmul_nt");
  require_matrix(vb, "matmul_nt");
  if (va.cols() != vb.cols()) throw ShapeError("matmul_nt: inner dims " + va.shape().str() + " x " + vb.shape().str() + "^T");
  Node n;
  n.op = OpKind::MatMulNT;
  n.inputs = {a, b};
  n.value = Tensor(Shape(va.rows(), vb.rows()));
  kernels::gemm_nt(va.data(), vb.data(), n.value.data(), va.rows(), va.cols(), vb.rows());
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape(va, vb, "add");
  Node n;
  n.op = OpKind::Add;
  n.inputs = {a, b};
  n.value = va;
  add_into(n.value, vb.data());
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_same_shape(va, vb, "mul");
  Node n;
  n.op = OpKind::Mul;
  n.inputs = {a, b};
  n.value = va;
  auto out = n.value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n;
  n.op = OpKind::Scale;
  n.inputs = {a};
  n.value = value(a);
  for (double& x : n.value.data()) x *= factor;
  n.scalar = factor;
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::add_row(NodeId x, NodeId row) {
  const Tensor& vx = value(x);
  const Tensor& vr = value(row);
  require_matrix(vx, "add_row");
  if (vr.rank() != 1 || vr.size() != vx.cols()) {
    throw ShapeError("add_row: row " + vr.shape().str() + " does not match " + vx.shape().str());
  }
  Node n;
  n.op = OpKind::AddRow;
  n.inputs = {x, row};
  n.value = vx;
  const std::size_t cols = vx.cols();
  auto out = n.value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vr[i % cols];
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  Node n;
  n.op = OpKind::Relu;
  n.inputs = {x};
  n.value = value(x);
  for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::gelu(NodeId x) {
  Node n;
  n.op = OpKind::Gelu;
  n.inputs = {x};
  n.value = value(x);
  for (double& v : n.value.data()) {
    const double inner = kGeluScale * (v + kGeluCoeff * v * v * v);
    v = 0.5 * v * (1.0 + std::tanh(inner));
  }
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, std::optional<NodeId> shift, double eps) {
  const Tensor& vx = value(x);
  const Tensor& vg = value(gain);
  require_matrix(vx, "layer_norm");
  const std::size_t rows = vx.rows();
  const std::size_t d = vx.cols();
  if (vg.rank() != 1 || vg.size() != d) throw ShapeError("layer_norm: gain must have length " + std::to_string(d));
  if (shift && (value(*shift).rank() != 1 || value(*shift).size() != d)) {
    throw ShapeError("layer_norm: shift must have length " + std::to_string(d));
  }
  Node n;
  n.op = OpKind::LayerNorm;
  n.inputs = {x, gain};
  if (shift) n.inputs.push_back(*shift);
  Tensor normed(vx.shape());
  Tensor rstd{Shape(rows)};
  n.value = Tensor(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += vx(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = vx(r, c) - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double xhat = (vx(r, c) - mean) * inv;
      normed(r, c) = xhat;
      n.value(r, c) = xhat * vg[c] + (shift ? value(*shift)[c] : 0.0);
    }
  }
  n.saved = {std::move(normed), std::move(rstd)};
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::cross_entropy(NodeId logits, std::span<const std::uint32_t> targets) {
  const Tensor& z = value(logits);
  require_matrix(z, "cross_entropy");
  const std::size_t rows = z.rows();
  const std::size_t classes = z.cols();
  if (targets.size() != rows) throw ShapeError("cross_entropy: one target per row required");
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= classes) throw InputError("cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    double peak = z(r, 0);
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, z(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(z(r, c) - peak);
      probs(r, c) = e;
      denom += e;
    }
    for (std::size_t c = 0; c < classes; ++c) probs(r, c) /= denom;
    total += peak + std::log(denom) - z(r, targets[r]);
  }
  Node n;
  n.op = OpKind::CrossEntropy;
  n.inputs = {logits};
  n.value = Tensor::scalar(total / static_cast<double>(rows));
  n.saved = {std::move(probs)};
  n.ids.assign(targets.begin(), targets.end());
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::embedding(NodeId table, std::span<const std::uint32_t> ids) {
  const Tensor& t = value(table);
  require_matrix(t, "embedding");
  const std::size_t d = t.cols();
  Node n;
  n.op = OpKind::Embedding;
  n.inputs = {table};
  n.value = Tensor(Shape(ids.size(), d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= t.rows()) throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(t.data().begin() + ids[i] * d, d, n.value.data().begin() + i * d);
  }
  n.ids.assign(ids.begin(), ids.end());
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::slice(NodeId x, std::size_t row0, std::size_t n_rows, std::size_t col0, std::size_t n_cols) {
  const Tensor& vx = value(x);
  require_matrix(vx, "slice");
  if (row0 + n_rows > vx.rows() || col0 + n_cols > vx.cols()) throw ShapeError("slice out of bounds of " + vx.shape().str());
  Node n;
  n.op = OpKind::Slice;
  n.inputs = {x};
  n.value = Tensor(Shape(n_rows, n_cols));
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) n.value(r, c) = vx(row0 + r, col0 + c);
  }
  n.geom = {row0, n_rows, col0, n_cols};
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (NodeId p : parts) {
    require_matrix(value(p), "concat_cols");
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.op = OpKind::ConcatCols;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor(Shape(rows, cols));
  std::size_t offset = 0;
  for (NodeId p : parts) {
    const Tensor& vp = value(p);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < vp.cols(); ++c) n.value(r, offset + c) = vp(r, c);
    }
    offset += vp.cols();
  }
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::concat_rows(std::span<const NodeId> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = value(parts[0]).cols();
  std::size_t rows = 0;
  for (NodeId p : parts) {
    require_matrix(value(p), "concat_rows");
    if (value(p).cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += value(p).rows();
  }
  Node n;
  n.op = OpKind::ConcatRows;
  n.inputs.assign(parts.begin(), parts.end());
  std::vector<double> data;
  data.reserve(rows * cols);
  for (NodeId p : parts) data.insert(data.end(), value(p).data().begin(), value(p).data().end());
  n.value = Tensor(Shape(rows, cols), std::move(data));
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::causal_softmax(NodeId scores) {
  const Tensor& s = value(scores);
  require_matrix(s, "causal_softmax");
  if (s.rows() != s.cols()) throw ShapeError("causal_softmax: scores must be square");
  const std::size_t t = s.rows();
  Node n;
  n.op = OpKind::CausalSoftmax;
  n.inputs = {scores};
  n.value = Tensor(s.shape());
  for (std::size_t i = 0; i < t; ++i) {
    double peak = s(i, 0);
    for (std::size_t j = 1; j <= i; ++j) peak = std::max(peak, s(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      const double e = std::exp(s(i, j) - peak);
      n.value(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j <= i; ++j) n.value(i, j) /= denom;
  }
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  Node n;
  n.op = OpKind::Sum;
  n.inputs = {x};
  n.value = Tensor::scalar(slim::sum(value(x)));
  n.needs_grad = any_needs_grad(n.inputs);
  return push(std::move(n));
}

std::map<NodeId, Tensor> backward(const Tape& tape, NodeId loss) {
  if (loss.index >= tape.nodes_.size()) throw ContractError("backward: loss node not on tape");
  if (tape.value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + tape.value(loss).shape().str());
  }
  const auto& nodes = tape.nodes_;
  std::vector<Tensor> grads(nodes.size());
  grads[loss.index] = Tensor::scalar(1.0);

  for (std::size_t idx = loss.index + 1; idx-- > 0;) {
    const auto& node = nodes[idx];
    if (!node.needs_grad || grads[idx].empty() || node.op == OpKind::Leaf) continue;
    const Tensor& dy = grads[idx];
    const auto wants = [&](std::size_t i) { return nodes[node.inputs[i].index].needs_grad; };
    const auto slot = [&](std::size_t i) -> Tensor& {
      const NodeId in = node.inputs[i];
      return grad_slot(grads, in, nodes[in.index].value.shape());
    };

    switch (node.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes[node.inputs[0].index].value;
        const Tensor& b = nodes[node.inputs[1].index].value;
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        if (wants(0)) {
          std::vector<double> da(m * k);
          kernels::gemm_nt(dy.data(), b.data(), da, m, n, k);
          add_into(slot(0), da);
        }
        if (wants(1)) {
          std::vector<double> db(k * n);
          kernels::gemm_tn(a.data(), dy.data(), db, k, m, n);
          add_into(slot(1), db);
        }
        break;
      }
      case OpKind::MatMulNT: {
        const Tensor& a = nodes[node.inputs[0].index].value;
        const Tensor& b = nodes[node.inputs[1].index].value;
        const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
        if (wants(0)) {
          std::vector<double> da(m * k);
          kernels::gemm_nn(dy.data(), b.data(), da, m, n, k);
          add_into(slot(0), da);
        }
        if (wants(1)) {
          std::vector<double> db(n * k);
          kernels::gemm_tn(dy.data(), a.data(), db, n, m, k);
          add_into(slot(1), db);
        }
        break;
      }
      case OpKind::Add:
        if (wants(0)) add_into(slot(0), dy.data());
        if (wants(1)) add_into(slot(1), dy.data());
        break;
      case OpKind::Mul: {
        const Tensor& a = nodes[node.inputs[0].index].value;
        const Tensor& b = nodes[node.inputs[1].index].value;
        if (wants(0)) {
          Tensor& g = slot(0);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b[i];
        }
        if (wants(1)) {
          Tensor& g = slot(1);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a[i];
        }
        break;
      }
      case OpKind::Scale: {
        Tensor& g = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * node.scalar;
        break;
      }
      case OpKind::AddRow: {
        if (wants(0)) add_into(slot(0), dy.data());
        if (wants(1)) {
          Tensor& g = slot(1);
          const std::size_t cols = g.size();
          for (std::size_t i = 0; i < dy.size(); ++i) g[i % cols] += dy[i];
        }
        break;
      }
      case OpKind::Relu: {
        const Tensor& x = nodes[node.inputs[0].index].value;
        Tensor& g = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > 0.0 ? dy[i] : 0.0;
        break;
      }
      case OpKind::Gelu: {
        const Tensor& x = nodes[node.inputs[0].index].value;
        Tensor& g = slot(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = x[i];
          const double th = std::tanh(kGeluScale * (v + kGeluCoeff * v * v * v));
          const double dinner = kGeluScale * (1.0 + 3.0 * kGeluCoeff * v * v);
          g[i] += dy[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner);
        }
        break;
      }
      case OpKind::LayerNorm: {
        const Tensor& gain = nodes[node.inputs[1].index].value;
        const Tensor& normed = node.saved[0];
        const Tensor& rstd = node.saved[1];
        const std::size_t rows = normed.rows();
        const std::size_t d = normed.cols();
        if (wants(0)) {
          Tensor& gx = slot(0);
          std::vector<double> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dxhat[c] = dy(r, c) * gain[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * normed(r, c);
            }
            mean_d /= static_cast<double>(d);
            mean_dx /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              gx(r, c) += rstd[r] * (dxhat[c] - mean_d - normed(r, c) * mean_dx);
            }
          }
        }
        if (wants(1)) {
          Tensor& gg = slot(1);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) gg[c] += dy(r, c) * normed(r, c);
          }
        }
        if (node.inputs.size() > 2 && wants(2)) {
          Tensor& gb = slot(2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) gb[c] += dy(r, c);
          }
        }
        break;
      }
      case OpKind::CrossEntropy: {
        const Tensor& probs = node.saved[0];
        Tensor& g = slot(0);
        const double w = dy[0] / static_cast<double>(probs.rows());
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double target = c == node.ids[r] ? 1.0 : 0.0;
            g(r, c) += w * (probs(r, c) - target);
          }
        }
        break;
      }
      case OpKind::Embedding: {
        Tensor& g = slot(0);
        const std::size_t d = g.cols();
        for (std::size_t i = 0; i < node.ids.size(); ++i) {
          const std::size_t row = node.ids[i];
          for (std::size_t c = 0; c < d; ++c) g(row, c) += dy(i, c);
        }
        break;
      }
      case OpKind::Slice: {
        Tensor& g = slot(0);
        const auto [row0, n_rows, col0, n_cols] = node.geom;
        for (std::size_t r = 0; r < n_rows; ++r) {
          for (std::size_t c = 0; c < n_cols; ++c) g(row0 + r, col0 + c) += dy(r, c);
        }
        break;
      }
      case OpKind::ConcatCols: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const std::size_t w = nodes[node.inputs[i].index].value.cols();
          if (wants(i)) {
            Tensor& g = slot(i);
            for (std::size_t r = 0; r < g.rows(); ++r) {
              for (std::size_t c = 0; c < w; ++c) g(r, c) += dy(r, offset + c);
            }
          }
          offset += w;
        }
        break;
      }
      case OpKind::ConcatRows: {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const std::size_t len = nodes[node.inputs[i].index].value.size();
          if (wants(i)) add_into(slot(i), dy.data().subspan(offset, len));
          offset += len;
        }
        break;
      }
      case OpKind::CausalSoftmax: {
        const Tensor& p = node.value;
        Tensor& g = slot(0);
        const std::size_t t = p.rows();
        for (std::size_t i = 0; i < t; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) dot += p(i, j) * dy(i, j);
          for (std::size_t j = 0; j <= i; ++j) g(i, j) += p(i, j) * (dy(i, j) - dot);
        }
        break;
      }
      case OpKind::Sum: {
        Tensor& g = slot(0);
        for (double& v : g.data()) v += dy[0];
        break;
      }
    }
  }

  std::map<NodeId, Tensor> out;
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    if (nodes[idx].op != OpKind::Leaf) continue;
    Tensor g = grads[idx].empty() ? Tensor(nodes[idx].value.shape()) : std::move(grads[idx]);
    out.emplace(NodeId{idx}, std::move(g));
  }
  return out;
}

}  // namespace slim

namespace slim {

double grad_check(const LossFn& loss, const GradFn& grad, std::vector<Tensor> params,
                  const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  bool any = false;
  for (const Tensor& p : params) any = any || !p.empty();
  if (!any) return 0.0;

  const auto checked_loss = [&](const std::vector<Tensor>& at) {
    const double value = loss(at);
    if (!std::isfinite(value)) throw DivergenceError("grad_check: loss is not finite");
    return value;
  };
  checked_loss(params);
  const std::vector<Tensor> analytic = grad(params);
  if (analytic.size() != params.size()) throw ContractError("grad_check: gradient count mismatch");

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].size();
    if (n == 0) continue;
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > options.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_param);
    }
    for (std::size_t c : coords) {
      const double original = params[p][c];
      params[p][c] = original + options.eps;
      const double up = checked_loss(params);
      params[p][c] = original - options.eps;
      const double down = checked_loss(params);
      params[p][c] = original;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double exact = analytic[p][c];
      const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace slim
