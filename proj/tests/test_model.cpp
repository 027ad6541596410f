#include <gtest/gtest.h>

#include <random>

#include "slim/data.hpp"
#include "slim/errors.hpp"
#include "slim/model.hpp"

namespace slim {
namespace {

TokenBatch random_tokens(std::size_t batch, std::size_t context, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> tok(0, static_cast<std::uint32_t>(vocab - 1));
  TokenBatch b{batch, context, {}, {}};
  for (std::size_t i = 0; i < batch * context; ++i) {
    b.inputs.push_back(tok(rng));
    b.targets.push_back(tok(rng));
  }
  return b;
}

ModelSpec tiny_transformer() {
  ModelSpec s;
  s.kind = ModelKind::MiniTransformer;
  s.vocab = 11;
  s.d_model = 8;
  s.n_layers = 2;
  s.n_heads = 2;
  s.context = 5;
  return s;
}

TEST(Census, MiniTransformerLayout) {
  const Census c = census_of(tiny_transformer());
  ASSERT_EQ(c.size(), 2u + 2 * 8 + 2);
  EXPECT_EQ(c.front().name, "wte");
  EXPECT_EQ(c.front().layer_type, LayerType::TokEmbd);
  EXPECT_EQ(c[1].layer_type, LayerType::PosEmbd);
  EXPECT_EQ(c.back().name, "lm_head");
  EXPECT_EQ(c.back().tied_to, "wte");
  const auto up = std::find_if(c.begin(), c.end(), [](const CensusEntry& e) { return e.name == "h.1.mlp.up"; });
  ASSERT_NE(up, c.end());
  EXPECT_EQ(up->fan_out, 32u);
  EXPECT_EQ(up->fan_in, 8u);
  EXPECT_EQ(up->depth, 1);
}

TEST(Census, Gpt2SmallCounts) {
  const Census c = census_of(gpt2_small_spec());
  std::size_t total = 0, vectors = 0;
  for (const CensusEntry& e : c) {
    if (e.tied_to) continue;
    total += e.numel();
    vectors += e.is_matrix() ? 0 : 1;
  }
  EXPECT_EQ(vectors, 25u);
  // 50304*768 + 1024*768 + 12*(4*768^2 + 2*3072*768) + 25*768
  EXPECT_EQ(total, 124373760u);
}

TEST(Census, TextRoundTrip) {
  ModelSpec s = tiny_transformer();
  const Census c = census_of(s);
  EXPECT_EQ(parse_census(format_census(c)), c);
  s.kind = ModelKind::MLPClassifier;
  EXPECT_EQ(parse_census(format_census(census_of(s))), census_of(s));
  EXPECT_THROW(parse_census("wte TokEmbd 0 4\n"), ParseError);
}

TEST(Model, BuildIsDeterministic) {
  const Model a = build_model(tiny_transformer(), 3);
  const Model b = build_model(tiny_transformer(), 3);
  const Model c = build_model(tiny_transformer(), 4);
  for (std::size_t i = 0; i < a.blocks().size(); ++i) EXPECT_EQ(a.blocks()[i].weights, b.blocks()[i].weights);
  EXPECT_NE(a.blocks()[0].weights, c.blocks()[0].weights);
}

TEST(Model, MitchellScalesResidualProjections) {
  ModelSpec s = tiny_transformer();
  s.d_model = 64;
  s.n_heads = 4;
  s.n_layers = 8;
  const Model m = build_model(s, 0);
  auto stdev = [](const Tensor& t) {
    double sq = 0;
    for (double x : t.data()) sq += x * x;
    return std::sqrt(sq / static_cast<double>(t.size()));
  };
  EXPECT_NEAR(stdev(m.weights(m.index_of("h.0.attn.query"))), 0.02, 0.002);
  EXPECT_NEAR(stdev(m.weights(m.index_of("h.0.attn.proj"))), 0.02 / 4.0, 0.0006);
  EXPECT_EQ(m.weights(m.index_of("h.0.ln_1")), Tensor(Shape(64), 1.0));
}

TEST(Model, DefaultInitIsUniformInFanIn) {
  ModelSpec s = tiny_transformer();
  s.init = InitScheme::Default;
  const Model m = build_model(s, 0);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double x : m.weights(m.index_of("h.0.mlp.down")).data()) EXPECT_LE(std::abs(x), 1.0 / std::sqrt(32.0));
  for (double x : m.weights(m.index_of("h.0.attn.key")).data()) EXPECT_LE(std::abs(x), bound);
}

TEST(Model, InitialLossIsNearUniform) {
  const Model m = build_model(tiny_transformer(), 1);
  EXPECT_NEAR(forward_loss(m, random_tokens(2, 5, 11, 0)), std::log(11.0), 0.05);
}

TEST(Model, RejectsBadInputs) {
  const Model m = build_model(tiny_transformer(), 1);
  TokenBatch b = random_tokens(1, 5, 11, 0);
  b.inputs[0] = 11;
  EXPECT_THROW(forward_loss(m, b), InputError);
  EXPECT_THROW(forward_loss(m, random_tokens(1, 6, 11, 0)), InputError);
  ModelSpec bad = tiny_transformer();
  bad.n_heads = 3;
  EXPECT_THROW(build_model(bad, 0), InputError);
}

TEST(Model, AttentionIsCausal) {
  const Model m = build_model(tiny_transformer(), 2);
  TokenBatch a = random_tokens(1, 5, 11, 7);
  TokenBatch b = a;
  b.inputs[4] = (b.inputs[4] + 1) % 11;
  const Tensor la = m.logits(a);
  const Tensor lb = m.logits(b);
  for (std::size_t pos = 0; pos < 4; ++pos) {
    for (std::size_t c = 0; c < 11; ++c) EXPECT_EQ(la(pos, c), lb(pos, c));
  }
  bool changed = false;
  for (std::size_t c = 0; c < 11; ++c) changed = changed || la(4, c) != lb(4, c);
  EXPECT_TRUE(changed);
}

TEST(Model, TiedGradientSumsBothUses) {
  const ModelSpec tied_spec = tiny_transformer();
  const Model tied = build_model(tied_spec, 5);
  ModelSpec untied_spec = tied_spec;
  untied_spec.weight_tying = false;
  std::vector<ParamBlock> blocks(tied.blocks().begin(), tied.blocks().end());
  blocks.back().weights = tied.weights(0);
  blocks.back().tied_to.reset();
  const Model untied(untied_spec, blocks);

  const Batch batch = random_tokens(2, 5, 11, 1);
  const LossAndGrads t = loss_and_grads(tied, batch);
  const LossAndGrads u = loss_and_grads(untied, batch);
  EXPECT_EQ(t.loss, u.loss);
  EXPECT_TRUE(t.grads.back().empty());
  const std::size_t head = tied.blocks().size() - 1;
  for (std::size_t i = 0; i < t.grads[0].size(); ++i) {
    EXPECT_NEAR(t.grads[0][i], u.grads[0][i] + u.grads[head][i], 1e-15);
  }
}

Batch batch_for(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == ModelKind::MLPClassifier) return make_blobs(12, spec.input_dim, spec.vocab, seed);
  return random_tokens(2, spec.context, spec.vocab, seed);
}

struct KindCase {
  const char* name;
  ModelSpec spec;
};

std::vector<KindCase> every_kind() {
  ModelSpec linear;
  linear.kind = ModelKind::LinearTokenModel;
  linear.vocab = 13;
  linear.d_model = 6;
  linear.context = 4;
  ModelSpec linear_untied = linear;
  linear_untied.weight_tying = false;
  ModelSpec mlp;
  mlp.kind = ModelKind::MLPClassifier;
  mlp.vocab = 3;
  mlp.d_model = 10;
  mlp.n_layers = 2;
  mlp.input_dim = 4;
  ModelSpec transformer_untied = tiny_transformer();
  transformer_untied.weight_tying = false;
  transformer_untied.init_std = 0.3;
  ModelSpec transformer = tiny_transformer();
  transformer.init_std = 0.3;
  return {{"linear_tied", linear},
          {"linear_untied", linear_untied},
          {"mlp", mlp},
          {"transformer_tied", transformer},
          {"transformer_untied", transformer_untied}};
}

TEST(Model, GradCheckEveryKind) {
  for (const KindCase& k : every_kind()) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const Model m = build_model(k.spec, seed);
      const double err = grad_check(m, batch_for(k.spec, seed), GradCheckOptions{1e-5, 6, seed});
      EXPECT_LT(err, 1e-4) << k.name << " seed " << seed;
    }
  }
}

}  // namespace
}  // namespace slim
