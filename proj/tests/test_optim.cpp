#include <gtest/gtest.h>

#include <random>

#include "reference_adam.hpp"
#include "slim/data.hpp"
#include "slim/errors.hpp"
#include "slim/optim.hpp"

namespace slim {
namespace {

ModelSpec mlp_spec() {
  ModelSpec s;
  s.kind = ModelKind::MLPClassifier;
  s.vocab = 3;
  s.d_model = 16;
  s.n_layers = 2;
  s.input_dim = 5;
  return s;
}

TEST(Schedule, WarmupThenCosineToTenth) {
  const Schedule s{1e-3, 10, 110};
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 5), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, 10), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 60), (1e-3 + 1e-4) / 2.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 110), 1e-4);
  EXPECT_THROW(lr_at(s, 111), InputError);
  EXPECT_THROW(lr_at(s, -1), InputError);
  for (std::int64_t t = 11; t <= 110; ++t) EXPECT_LE(lr_at(s, t), lr_at(s, t - 1));
}

TEST(Hyper, Validation) {
  Hyper h;
  h.beta2 = 1.0;
  EXPECT_THROW(h.validate(), InputError);
  h = Hyper{};
  h.eps = -1;
  EXPECT_THROW(h.validate(), InputError);
  h = Hyper{};
  h.lr = 0;
  EXPECT_THROW(h.validate(), InputError);
}

TEST(Clip, ScalesOnlyAboveThreshold) {
  std::vector<Tensor> g{Tensor::vector({3, 0}), Tensor::vector({0, 4})};
  EXPECT_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0][0], 0.6);
  EXPECT_DOUBLE_EQ(g[1][1], 0.8);
  std::vector<Tensor> small{Tensor::vector({0.1})};
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.1);
  std::vector<Tensor> bad{Tensor::vector({std::nan("")})};
  EXPECT_THROW(clip_grad_norm(bad, 1.0), DivergenceError);
}

TEST(SharedMomentStep, FirstStepIsSignLike) {
  Hyper h;
  h.weight_decay = 0.0;
  MomentState s = MomentState::zeros(Shape(1), Axes::None);
  Tensor w = Tensor::vector({1.0});
  shared_moment_step(s, w, Tensor::vector({0.5}), h, 0.1, 1, 0.0);
  EXPECT_NEAR(w[0], 0.9, 1e-8);
  EXPECT_DOUBLE_EQ(s.m[0], 0.05);
  EXPECT_DOUBLE_EQ(s.v[0], (1.0 - h.beta2) * 0.25);
}

TEST(SharedMomentStep, SharedMomentHasReducedShape) {
  const Shape shape(3, 4);
  EXPECT_EQ(MomentState::zeros(shape, Axes::FanIn).v.shape(), Shape(3));
  EXPECT_EQ(MomentState::zeros(shape, Axes::FanOut).v.shape(), Shape(4));
  EXPECT_EQ(MomentState::zeros(shape, Axes::Both).v.shape(), Shape(1));
  MomentState s = MomentState::zeros(shape, Axes::FanIn);
  Tensor w(shape, 1.0);
  const Tensor g = Tensor::matrix({{1, 1, 1, 1}, {0, 0, 0, 2}, {3, 0, 0, 0}});
  shared_moment_step(s, w, g, Hyper{}, 1e-3, 1, 0.0);
  EXPECT_DOUBLE_EQ(s.v[0], (1.0 - Hyper{}.beta2) * 1.0);
  EXPECT_DOUBLE_EQ(s.v[1], (1.0 - Hyper{}.beta2) * 1.0);
  EXPECT_DOUBLE_EQ(s.v[2], (1.0 - Hyper{}.beta2) * 2.25);
  EXPECT_THROW(shared_moment_step(s, w, g, Hyper{}, 1e-3, 0, 0.0), ContractError);
}

TEST(SharedMomentStep, NonFiniteUpdateNamesTheBlock) {
  MomentState s = MomentState::zeros(Shape(2), Axes::None);
  Tensor w = Tensor::vector({1, 1});
  try {
    shared_moment_step(s, w, Tensor::vector({std::numeric_limits<double>::infinity(), 0}), Hyper{}, 1e-3, 1, 0.0,
                       "h.0.ln_1");
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("h.0.ln_1"), std::string::npos);
  }
}

std::vector<std::vector<double>> flat_params(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const ParamBlock& b : m.blocks()) out.emplace_back(b.weights.data().begin(), b.weights.data().end());
  return out;
}

// SlimAdam with every block uncompressed against the textbook oracle.
void expect_matches_reference(std::uint64_t seed, int steps) {
  const ModelSpec spec = mlp_spec();
  Model model = build_model(spec, seed);
  Model oracle_model = model;
  Hyper hyper;
  hyper.lr = 1e-2;
  RuleSet none;
  for (const ParamBlock& b : model.blocks()) none.set(b.name, Axes::None);
  SharedMomentAdam opt(model, none, hyper);

  testing::ReferenceAdam ref;
  std::vector<bool> is_matrix;
  for (const ParamBlock& b : model.blocks()) is_matrix.push_back(b.weights.rank() == 2);
  auto params = flat_params(model);
  ref.init(params, is_matrix);
  const Schedule sched{hyper.lr, 10, steps};

  const FeatureBatch data = make_blobs(64, spec.input_dim, spec.vocab, seed);
  for (int t = 1; t <= steps; ++t) {
    const double lr = lr_at(sched, t);
    LossAndGrads lg = loss_and_grads(model, data);
    opt.step(model, lg.grads, lr);

    for (std::size_t b = 0; b < params.size(); ++b) {
      std::copy(params[b].begin(), params[b].end(), oracle_model.blocks()[b].weights.data().begin());
    }
    const LossAndGrads og = loss_and_grads(oracle_model, data);
    std::vector<std::vector<double>> grads;
    for (const Tensor& g : og.grads) grads.emplace_back(g.data().begin(), g.data().end());
    ref.step(params, grads, lr);
  }
  EXPECT_EQ(flat_params(model), params) << "seed " << seed;
}

TEST(SharedMomentAdam, AllNoneIsBitIdenticalToReferenceAdam) {
  for (std::uint64_t seed : {0u, 1u, 2u}) expect_matches_reference(seed, 100);
}

TEST(SharedMomentAdam, EmptyRulesEqualAllNone) {
  Model a = build_model(mlp_spec(), 0);
  Model b = a;
  RuleSet none;
  for (const ParamBlock& blk : a.blocks()) none.set(blk.name, Axes::None);
  SharedMomentAdam oa(a, RuleSet{}, Hyper{});
  SharedMomentAdam ob(b, none, Hyper{});
  const FeatureBatch data = make_blobs(32, 5, 3, 0);
  for (int t = 0; t < 20; ++t) {
    auto ga = loss_and_grads(a, data).grads;
    auto gb = loss_and_grads(b, data).grads;
    oa.step(a, ga, 1e-2);
    ob.step(b, gb, 1e-2);
  }
  EXPECT_EQ(flat_params(a), flat_params(b));
}

// Gradients equal along the shared axes: the shared second moment equals every
// per-entry moment, so the trajectories coincide.
TEST(SharedMomentAdam, ConstantAlongKMatchesAdam) {
  const std::size_t rows = 5, cols = 7;
  for (Axes k : {Axes::FanOut, Axes::FanIn, Axes::Both}) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal;
    MomentState shared = MomentState::zeros(Shape(rows, cols), k);
    MomentState full = MomentState::zeros(Shape(rows, cols), Axes::None);
    Tensor ws(Shape(rows, cols), 0.5), wf(Shape(rows, cols), 0.5);
    for (std::int64_t t = 1; t <= 200; ++t) {
      std::vector<double> row_val(rows), col_val(cols);
      for (double& x : row_val) x = normal(rng);
      for (double& x : col_val) x = normal(rng);
      const double both_val = normal(rng);
      Tensor g(Shape(rows, cols));
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          g(r, c) = k == Axes::FanIn ? row_val[r] : k == Axes::FanOut ? col_val[c] : both_val;
        }
      }
      shared_moment_step(shared, ws, g, Hyper{}, 1e-2, t, 0.1);
      shared_moment_step(full, wf, g, Hyper{}, 1e-2, t, 0.1);
    }
    for (std::size_t i = 0; i < ws.size(); ++i) {
      EXPECT_NEAR(ws[i], wf[i], 1e-12 * std::abs(wf[i])) << to_string(k);
    }
  }
}

TEST(SharedMomentAdam, RuleValidation) {
  ModelSpec s;
  s.kind = ModelKind::LinearTokenModel;
  s.vocab = 8;
  s.d_model = 4;
  const Model tied = build_model(s, 0);
  RuleSet alias;
  alias.set("lm_head", Axes::FanIn);
  EXPECT_THROW(SharedMomentAdam(tied, alias, Hyper{}), InputError);
  RuleSet unknown;
  unknown.set("nope", Axes::FanIn);
  EXPECT_THROW(SharedMomentAdam(tied, unknown, Hyper{}), InputError);

  const Model mlp = build_model(mlp_spec(), 0);
  RuleSet vec;
  vec.set("mlp.0.bias", Axes::FanIn);
  EXPECT_THROW(SharedMomentAdam(mlp, vec, Hyper{}), ShapeError);
}

TEST(SharedMomentAdam, TiedBlocksShareOneState) {
  ModelSpec s;
  s.kind = ModelKind::LinearTokenModel;
  s.vocab = 8;
  s.d_model = 4;
  const Model tied = build_model(s, 0);
  SharedMomentAdam opt(tied, RuleSet{}, Hyper{});
  EXPECT_EQ(opt.slots().size(), 1u);
  EXPECT_EQ(opt.second_moment_entries(), 32u);
}

TEST(SharedMomentAdam, WeightDecaySkipsVectorsByDefault) {
  const Model m = build_model(mlp_spec(), 0);
  SharedMomentAdam opt(m, RuleSet{}, Hyper{});
  for (const auto& slot : opt.slots()) {
    EXPECT_EQ(slot.weight_decay, m.blocks()[slot.block].weights.rank() == 2 ? 0.1 : 0.0) << slot.name;
  }
  Hyper h;
  h.decay_vectors = true;
  SharedMomentAdam all(m, RuleSet{}, h);
  for (const auto& slot : all.slots()) EXPECT_EQ(slot.weight_decay, 0.1);
}

TEST(SharedMomentAdam, CheckpointRoundTripIsBitExact) {
  Model model = build_model(mlp_spec(), 1);
  const RuleSet rules = make_baseline_rules(model.census(), Baseline::AdaminiV2);
  SharedMomentAdam opt(model, rules, Hyper{});
  const FeatureBatch data = make_blobs(32, 5, 3, 1);
  for (int t = 0; t < 5; ++t) {
    auto g = loss_and_grads(model, data).grads;
    opt.step(model, g, 1e-2);
  }
  SharedMomentAdam copy(model, rules, Hyper{});
  copy.restore(opt.checkpoint());
  EXPECT_EQ(copy.checkpoint(), opt.checkpoint());
  EXPECT_EQ(copy.steps(), 5);
  Model model2 = model;
  for (int t = 0; t < 3; ++t) {
    auto g1 = loss_and_grads(model, data).grads;
    auto g2 = loss_and_grads(model2, data).grads;
    opt.step(model, g1, 1e-2);
    copy.step(model2, g2, 1e-2);
  }
  EXPECT_EQ(flat_params(model), flat_params(model2));

  SharedMomentAdam other(model, RuleSet{}, Hyper{});
  EXPECT_THROW(other.restore(opt.checkpoint()), ParseError);
  EXPECT_THROW(other.restore("garbage"), ParseError);
}

TEST(Baselines, Variants) {
  ModelSpec s;
  s.vocab = 16;
  s.d_model = 8;
  s.n_layers = 1;
  s.n_heads = 2;
  s.context = 4;
  const Census c = census_of(s);
  const RuleSet adalayer = make_baseline_rules(c, "adalayer");
  EXPECT_EQ(adalayer.at("wte"), Axes::Both);
  EXPECT_EQ(adalayer.at("h.0.ln_1"), Axes::Both);
  EXPECT_FALSE(adalayer.find("lm_head"));
  const RuleSet ln_tl = make_baseline_rules(c, "adalayer_ln_tl");
  EXPECT_EQ(ln_tl.at("wte"), Axes::None);
  EXPECT_EQ(ln_tl.at("h.0.ln_2"), Axes::None);
  EXPECT_EQ(ln_tl.at("h.0.attn.key"), Axes::Both);
  const RuleSet mini = make_baseline_rules(c, "adamini_v2");
  EXPECT_EQ(mini.at("h.0.mlp.up"), Axes::FanIn);
  EXPECT_EQ(mini.at("ln_f"), Axes::Both);
  const RuleSet adam = make_baseline_rules(c, "adam");
  for (const auto& [name, k] : adam.entries()) EXPECT_EQ(k, Axes::None) << name;
  EXPECT_THROW(make_baseline_rules(c, "lion"), InputError);
}

TEST(SharedMomentAdam, CompressedStateCounts) {
  ModelSpec s;
  s.vocab = 16;
  s.d_model = 8;
  s.n_layers = 1;
  s.n_heads = 2;
  s.context = 4;
  const Model m = build_model(s, 0);
  SharedMomentAdam adalayer(m, make_baseline_rules(m.census(), Baseline::AdaLayer), Hyper{});
  EXPECT_EQ(adalayer.second_moment_entries(), adalayer.slots().size());
}

}  // namespace
}  // namespace slim
