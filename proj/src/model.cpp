#include "slim/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "slim/errors.hpp"

namespace slim {
namespace {

constexpr std::pair<LayerType, std::string_view> kLayerNames[] = {
    {LayerType::TokEmbd, "TokEmbd"},     {LayerType::LMHead, "LMHead"},
    {LayerType::AttnKey, "AttnKey"},     {LayerType::AttnQuery, "AttnQuery"},
    {LayerType::AttnValue, "AttnValue"}, {LayerType::AttnProj, "AttnProj"},
    {LayerType::MLPUp, "MLPUp"},         {LayerType::MLPDown, "MLPDown"},
    {LayerType::AttnLN, "AttnLN"},       {LayerType::MLPLN, "MLPLN"},
    {LayerType::FinalLN, "FinalLN"},     {LayerType::PosEmbd, "PosEmbd"},
    {LayerType::Generic, "Generic"},
};

enum class Init { Normal, TruncNormal, Uniform, Ones, Zeros };

struct BlockPlan {
  CensusEntry entry;
  Init init = Init::Zeros;
  double scale = 0.0;  // std for normals, bound for uniform
};

std::string layer_name(std::size_t layer, std::string_view leaf) {
  return "h." + std::to_string(layer) + "." + std::string(leaf);
}

// Matrix init for the chosen scheme. `residual` marks projections that
// write into the residual stream.
BlockPlan matrix_plan(const ModelSpec& spec, std::string name, LayerType type, int depth,
                      std::size_t fan_out, std::size_t fan_in, bool residual = false) {
  BlockPlan plan{CensusEntry{std::move(name), type, depth, fan_out, fan_in, std::nullopt}};
  if (spec.init == InitScheme::Default) {
    plan.init = Init::Uniform;
    plan.scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  } else {
    plan.init = Init::Normal;
    plan.scale = residual ? spec.init_std / std::sqrt(2.0 * static_cast<double>(spec.n_layers)) : spec.init_std;
  }
  return plan;
}

BlockPlan vector_plan(std::string name, LayerType type, int depth, std::size_t length, Init init) {
  return BlockPlan{CensusEntry{std::move(name), type, depth, length, 0, std::nullopt}, init, 0.0};
}

std::vector<BlockPlan> plan_blocks(const ModelSpec& spec) {
  spec.validate();
  std::vector<BlockPlan> plans;
  const std::size_t d = spec.d_model;
  switch (spec.kind) {
    case ModelKind::LinearTokenModel: {
      // Embedding ~ N(0, 1), head ~ N(0, 1/fan_in), both truncated at 2 sigma.
      plans.push_back({CensusEntry{"wte", LayerType::TokEmbd, 0, spec.vocab, d, std::nullopt}, Init::TruncNormal, 1.0});
      CensusEntry head{"lm_head", LayerType::LMHead, 1, spec.vocab, d, std::nullopt};
      if (spec.weight_tying) {
        head.tied_to = "wte";
        plans.push_back({head, Init::Zeros, 0.0});
      } else {
        plans.push_back({head, Init::TruncNormal, 1.0 / std::sqrt(static_cast<double>(d))});
      }
      break;
    }
    case ModelKind::MLPClassifier: {
      std::size_t in = spec.input_dim;
      for (std::size_t l = 0; l < spec.n_layers; ++l) {
        const std::string prefix = "mlp." + std::to_string(l);
        plans.push_back(matrix_plan(spec, prefix + ".weight", LayerType::Generic, static_cast<int>(l), d, in));
        plans.push_back(vector_plan(prefix + ".bias", LayerType::Generic, static_cast<int>(l), d, Init::Zeros));
        in = d;
      }
      const int depth = static_cast<int>(spec.n_layers);
      plans.push_back(matrix_plan(spec, "mlp.out.weight", LayerType::Generic, depth, spec.vocab, in));
      plans.push_back(vector_plan("mlp.out.bias", LayerType::Generic, depth, spec.vocab, Init::Zeros));
      break;
    }
    case ModelKind::MiniTransformer: {
      plans.push_back(matrix_plan(spec, "wte", LayerType::TokEmbd, 0, spec.vocab, d));
      plans.push_back(matrix_plan(spec, "wpe", LayerType::PosEmbd, 0, spec.context, d));
      for (std::size_t l = 0; l < spec.n_layers; ++l) {
        const int depth = static_cast<int>(l);
        plans.push_back(vector_plan(layer_name(l, "ln_1"), LayerType::AttnLN, depth, d, Init::Ones));
        plans.push_back(matrix_plan(spec, layer_name(l, "attn.query"), LayerType::AttnQuery, depth, d, d));
        plans.push_back(matrix_plan(spec, layer_name(l, "attn.key"), LayerType::AttnKey, depth, d, d));
        plans.push_back(matrix_plan(spec, layer_name(l, "attn.value"), LayerType::AttnValue, depth, d, d));
        plans.push_back(matrix_plan(spec, layer_name(l, "attn.proj"), LayerType::AttnProj, depth, d, d, true));
        plans.push_back(vector_plan(layer_name(l, "ln_2"), LayerType::MLPLN, depth, d, Init::Ones));
        plans.push_back(matrix_plan(spec, layer_name(l, "mlp.up"), LayerType::MLPUp, depth, 4 * d, d));
        plans.push_back(matrix_plan(spec, layer_name(l, "mlp.down"), LayerType::MLPDown, depth, d, 4 * d, true));
      }
      const int last = static_cast<int>(spec.n_layers);
      plans.push_back(vector_plan("ln_f", LayerType::FinalLN, last, d, Init::Ones));
      BlockPlan head = matrix_plan(spec, "lm_head", LayerType::LMHead, last, spec.vocab, d);
      if (spec.weight_tying) {
        head.entry.tied_to = "wte";
        head.init = Init::Zeros;
      }
      plans.push_back(head);
      break;
    }
  }
  return plans;
}

Tensor initialise(const BlockPlan& plan, std::mt19937_64& rng) {
  const CensusEntry& e = plan.entry;
  Tensor t = e.is_matrix() ? Tensor(Shape(e.fan_out, e.fan_in)) : Tensor(Shape(e.fan_out));
  switch (plan.init) {
    case Init::Zeros: break;
    case Init::Ones:
      for (double& x : t.data()) x = 1.0;
      break;
    case Init::Normal: {
      std::normal_distribution<double> dist(0.0, plan.scale);
      for (double& x : t.data()) x = dist(rng);
      break;
    }
    case Init::TruncNormal: {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (double& x : t.data()) {
        double z = dist(rng);
        while (std::abs(z) > 2.0) z = dist(rng);
        x = z * plan.scale;
      }
      break;
    }
    case Init::Uniform: {
      std::uniform_real_distribution<double> dist(-plan.scale, plan.scale);
      for (double& x : t.data()) x = dist(rng);
      break;
    }
  }
  return t;
}

const TokenBatch& require_tokens(const Batch& batch, std::string_view kind) {
  const auto* tokens = std::get_if<TokenBatch>(&batch);
  if (tokens == nullptr) throw InputError(std::string(kind) + " expects a token batch");
  if (tokens->inputs.size() != tokens->batch * tokens->context || tokens->targets.size() != tokens->inputs.size()) {
    throw InputError("token batch size does not match batch x context");
  }
  return *tokens;
}

void check_token_range(std::span<const std::uint32_t> ids, std::size_t vocab) {
  for (std::uint32_t id : ids) {
    if (id >= vocab) {
      throw InputError("token id " + std::to_string(id) + " out of range for vocab " + std::to_string(vocab));
    }
  }
}

}  // namespace

std::string_view to_string(LayerType t) {
  for (const auto& [type, name] : kLayerNames) {
    if (type == t) return name;
  }
  return "Generic";
}

std::optional<LayerType> parse_layer_type(std::string_view token) {
  for (const auto& [type, name] : kLayerNames) {
    if (name == token) return type;
  }
  return std::nullopt;
}

bool is_norm(LayerType t) noexcept {
  return t == LayerType::AttnLN || t == LayerType::MLPLN || t == LayerType::FinalLN;
}

bool has_token_dim(LayerType t) noexcept { return t == LayerType::TokEmbd || t == LayerType::LMHead; }

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LinearTokenModel: return "linear_token";
    case ModelKind::MLPClassifier: return "mlp_classifier";
    case ModelKind::MiniTransformer: return "mini_transformer";
  }
  return "mini_transformer";
}

std::optional<ModelKind> parse_model_kind(std::string_view token) {
  if (token == "linear_token") return ModelKind::LinearTokenModel;
  if (token == "mlp_classifier") return ModelKind::MLPClassifier;
  if (token == "mini_transformer") return ModelKind::MiniTransformer;
  return std::nullopt;
}

std::string_view to_string(InitScheme s) { return s == InitScheme::Mitchell ? "mitchell" : "default"; }

std::optional<InitScheme> parse_init_scheme(std::string_view token) {
  if (token == "mitchell") return InitScheme::Mitchell;
  if (token == "default") return InitScheme::Default;
  return std::nullopt;
}

void ModelSpec::validate() const {
  if (vocab == 0 || d_model == 0) throw InputError("model: vocab and d_model must be positive");
  switch (kind) {
    case ModelKind::LinearTokenModel: break;
    case ModelKind::MLPClassifier:
      if (input_dim == 0) throw InputError("model: input_dim must be positive");
      break;
    case ModelKind::MiniTransformer:
      if (n_layers == 0 || n_heads == 0 || context == 0) {
        throw InputError("model: n_layers, n_heads and context must be positive");
      }
      if (d_model % n_heads != 0) throw InputError("model: d_model must be divisible by n_heads");
      break;
  }
  if (!(init_std > 0.0)) throw InputError("model: init_std must be positive");
}

Census census_of(const ModelSpec& spec) {
  Census out;
  for (auto& plan : plan_blocks(spec)) out.push_back(std::move(plan.entry));
  return out;
}

ModelSpec gpt2_small_spec() {
  ModelSpec spec;
  spec.kind = ModelKind::MiniTransformer;
  spec.vocab = 50304;
  spec.d_model = 768;
  spec.n_layers = 12;
  spec.n_heads = 12;
  spec.context = 1024;
  spec.weight_tying = true;
  return spec;
}

std::string format_census(const Census& census) {
  std::ostringstream os;
  for (const CensusEntry& e : census) {
    os << e.name << ' ' << to_string(e.layer_type) << ' ' << e.depth << ' ' << e.fan_out << ' ';
    if (e.is_matrix()) {
      os << e.fan_in;
    } else {
      os << '-';
    }
    os << ' ' << e.tied_to.value_or("-") << '\n';
  }
  return os.str();
}

Census parse_census(std::string_view text) {
  Census out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string name, type, fan_in, tied;
    CensusEntry e;
    if (!(fields >> name >> type >> e.depth >> e.fan_out >> fan_in >> tied)) {
      throw ParseError(line_no, "expected `name layer_type depth fan_out fan_in tied_to`");
    }
    const auto lt = parse_layer_type(type);
    if (!lt) throw ParseError(line_no, "unknown layer type `" + type + "`");
    e.name = name;
    e.layer_type = *lt;
    if (fan_in != "-") {
      try {
        e.fan_in = std::stoul(fan_in);
      } catch (const std::exception&) {
        throw ParseError(line_no, "bad fan_in `" + fan_in + "`");
      }
    }
    if (tied != "-") e.tied_to = tied;
    out.push_back(std::move(e));
  }
  return out;
}

Model::Model(ModelSpec spec, std::vector<ParamBlock> blocks) : spec_(spec), blocks_(std::move(blocks)) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].tied()) {
      const std::size_t owner = index_of(*blocks_[i].tied_to);
      if (blocks_[owner].tied()) throw InputError("block " + blocks_[i].name + " is tied to another alias");
    }
  }
}

std::size_t Model::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw InputError("no block named `" + std::string(name) + "`");
}

std::size_t Model::owner_of(std::size_t i) const {
  return blocks_[i].tied() ? index_of(*blocks_[i].tied_to) : i;
}

Census Model::census() const {
  Census out;
  for (const ParamBlock& b : blocks_) {
    const Tensor& w = blocks_[owner_of(&b - blocks_.data())].weights;
    CensusEntry e{b.name, b.layer_type, b.depth, w.rows(), w.rank() == 2 ? w.cols() : 0, b.tied_to};
    out.push_back(std::move(e));
  }
  return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ParamBlock> blocks;
  for (const BlockPlan& plan : plan_blocks(spec)) {
    ParamBlock b{plan.entry.name, plan.entry.layer_type, plan.entry.depth, Tensor(), plan.entry.tied_to};
    if (!b.tied()) b.weights = initialise(plan, rng);
    blocks.push_back(std::move(b));
  }
  return Model(spec, std::move(blocks));
}

NodeId Model::record_linear_token(Tape& tape, const TokenBatch& batch, std::span<const NodeId> leaves) const {
  const NodeId hidden = tape.embedding(leaves[0], batch.inputs);
  return tape.matmul_nt(hidden, leaves[1]);
}

NodeId Model::record_mlp(Tape& tape, const FeatureBatch& batch, std::span<const NodeId> leaves) const {
  if (batch.features.rank() != 2 || batch.features.cols() != spec_.input_dim) {
    throw InputError("feature batch must have " + std::to_string(spec_.input_dim) + " columns");
  }
  NodeId x = tape.constant(batch.features);
  for (std::size_t l = 0; l < spec_.n_layers; ++l) {
    x = tape.relu(tape.add_row(tape.matmul_nt(x, leaves[2 * l]), leaves[2 * l + 1]));
  }
  const std::size_t out = 2 * spec_.n_layers;
  return tape.add_row(tape.matmul_nt(x, leaves[out]), leaves[out + 1]);
}

NodeId Model::record_transformer(Tape& tape, const TokenBatch& batch, std::span<const NodeId> leaves) const {
  const std::size_t T = batch.context;
  const std::size_t B = batch.batch;
  const std::size_t d = spec_.d_model;
  const std::size_t heads = spec_.n_heads;
  const std::size_t hd = d / heads;
  if (T > spec_.context) throw InputError("batch context exceeds the model's positional table");

  std::vector<std::uint32_t> positions(B * T);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::uint32_t>(i % T);

  NodeId x = tape.add(tape.embedding(leaves[0], batch.inputs), tape.embedding(leaves[1], positions));
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  std::size_t at = 2;
  for (std::size_t l = 0; l < spec_.n_layers; ++l) {
    const NodeId ln1 = leaves[at], wq = leaves[at + 1], wk = leaves[at + 2], wv = leaves[at + 3],
                 wproj = leaves[at + 4], ln2 = leaves[at + 5], wup = leaves[at + 6], wdown = leaves[at + 7];
    at += 8;

    const NodeId h = tape.layer_norm(x, ln1);
    const NodeId q = tape.matmul_nt(h, wq);
    const NodeId k = tape.matmul_nt(h, wk);
    const NodeId v = tape.matmul_nt(h, wv);
    std::vector<NodeId> sequences;
    sequences.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<NodeId> head_out;
      head_out.reserve(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const NodeId qs = tape.slice(q, b * T, T, hh * hd, hd);
        const NodeId ks = tape.slice(k, b * T, T, hh * hd, hd);
        const NodeId vs = tape.slice(v, b * T, T, hh * hd, hd);
        const NodeId scores = tape.scale(tape.matmul_nt(qs, ks), inv_sqrt_hd);
        head_out.push_back(tape.matmul(tape.causal_softmax(scores), vs));
      }
      sequences.push_back(tape.concat_cols(head_out));
    }
    const NodeId attn = tape.concat_rows(sequences);
    x = tape.add(x, tape.matmul_nt(attn, wproj));

    const NodeId h2 = tape.layer_norm(x, ln2);
    const NodeId up = tape.gelu(tape.matmul_nt(h2, wup));
    x = tape.add(x, tape.matmul_nt(up, wdown));
  }
  const NodeId xf = tape.layer_norm(x, leaves[at]);
  return tape.matmul_nt(xf, leaves[at + 1]);
}

NodeId Model::record_logits(Tape& tape, const Batch& batch, std::span<const NodeId> leaves) const {
  switch (spec_.kind) {
    case ModelKind::LinearTokenModel: {
      const TokenBatch& tb = require_tokens(batch, "linear token model");
      check_token_range(tb.inputs, spec_.vocab);
      check_token_range(tb.targets, spec_.vocab);
      return record_linear_token(tape, tb, leaves);
    }
    case ModelKind::MiniTransformer: {
      const TokenBatch& tb = require_tokens(batch, "transformer");
      check_token_range(tb.inputs, spec_.vocab);
      check_token_range(tb.targets, spec_.vocab);
      return record_transformer(tape, tb, leaves);
    }
    case ModelKind::MLPClassifier: {
      const auto* fb = std::get_if<FeatureBatch>(&batch);
      if (fb == nullptr) throw InputError("MLP classifier expects a feature batch");
      check_token_range(fb->labels, spec_.vocab);
      return record_mlp(tape, *fb, leaves);
    }
  }
  throw InputError("unknown model kind");
}

Model::Graph Model::record(Tape& tape, const Batch& batch) const {
  Graph g;
  g.leaves.resize(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!blocks_[i].tied()) g.leaves[i] = tape.leaf(blocks_[i].weights);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].tied()) g.leaves[i] = g.leaves[owner_of(i)];
  }
  const NodeId logits = record_logits(tape, batch, g.leaves);
  const auto& targets = std::holds_alternative<TokenBatch>(batch) ? std::get<TokenBatch>(batch).targets
                                                                  : std::get<FeatureBatch>(batch).labels;
  g.loss = tape.cross_entropy(logits, targets);
  return g;
}

Tensor Model::logits(const TokenBatch& batch) const {
  Tape tape;
  std::vector<NodeId> leaves(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!blocks_[i].tied()) leaves[i] = tape.constant(blocks_[i].weights);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].tied()) leaves[i] = leaves[owner_of(i)];
  }
  return tape.value(record_logits(tape, Batch{batch}, leaves));
}

double forward_loss(const Model& model, const Batch& batch) {
  Tape tape;
  const auto graph = model.record(tape, batch);
  return tape.value(graph.loss)[0];
}

LossAndGrads loss_and_grads(const Model& model, const Batch& batch) {
  Tape tape;
  const auto graph = model.record(tape, batch);
  auto grads = backward(tape, graph.loss);
  LossAndGrads out;
  out.loss = tape.value(graph.loss)[0];
  out.grads.resize(graph.leaves.size());
  for (std::size_t i = 0; i < graph.leaves.size(); ++i) {
    if (!model.blocks()[i].tied()) out.grads[i] = std::move(grads.at(graph.leaves[i]));
  }
  return out;
}

double grad_check(const Model& model, const Batch& batch, const GradCheckOptions& options) {
  std::vector<std::size_t> owners;
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    if (!model.blocks()[i].tied()) {
      owners.push_back(i);
      params.push_back(model.blocks()[i].weights);
    }
  }
  Model scratch = model;
  const auto load = [&](const std::vector<Tensor>& p) {
    for (std::size_t j = 0; j < owners.size(); ++j) scratch.blocks()[owners[j]].weights = p[j];
  };
  const LossFn loss = [&](const std::vector<Tensor>& p) {
    load(p);
    return forward_loss(scratch, batch);
  };
  const GradFn grad = [&](const std::vector<Tensor>& p) {
    load(p);
    auto lg = loss_and_grads(scratch, batch);
    std::vector<Tensor> out;
    for (std::size_t i : owners) out.push_back(std::move(lg.grads[i]));
    return out;
  };
  return grad_check(loss, grad, std::move(params), options);
}

}  // namespace slim
