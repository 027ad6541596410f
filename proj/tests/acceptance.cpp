// Acceptance checks at desk scale. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "reference_adam.hpp"
#include "slim/data.hpp"
#include "slim/harness.hpp"
#include "slim/io_util.hpp"
#include "slim/model.hpp"
#include "slim/optim.hpp"
#include "slim/rules.hpp"
#include "slim/snr.hpp"
#include "snr_oracle.hpp"

namespace fs = std::filesystem;
using namespace slim;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::vector<double>> flat_params(const Model& m) {
  std::vector<std::vector<double>> out;
  for (const ParamBlock& b : m.blocks()) out.emplace_back(b.weights.data().begin(), b.weights.data().end());
  return out;
}

Outcome adam_equivalence() {
  ModelSpec spec;
  spec.kind = ModelKind::MLPClassifier;
  spec.vocab = 3;
  spec.d_model = 16;
  spec.n_layers = 2;
  spec.input_dim = 5;
  Hyper hyper;
  hyper.lr = 1e-2;
  const Schedule sched{hyper.lr, 10, 100};
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    Model model = build_model(spec, seed);
    Model oracle_model = model;
    RuleSet none;
    for (const ParamBlock& b : model.blocks()) none.set(b.name, Axes::None);
    SharedMomentAdam opt(model, none, hyper);
    testing::ReferenceAdam ref;
    std::vector<bool> is_matrix;
    for (const ParamBlock& b : model.blocks()) is_matrix.push_back(b.weights.rank() == 2);
    auto params = flat_params(model);
    ref.init(params, is_matrix);
    const FeatureBatch data = make_blobs(64, spec.input_dim, spec.vocab, seed);
    for (int t = 1; t <= 100; ++t) {
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
    if (flat_params(model) != params) return {false, "seed " + std::to_string(seed) + " differs"};
  }
  return {true, "bit-identical over 100 steps, seeds 0-2"};
}

std::vector<std::vector<double>> random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::exponential_distribution<double> draw(1.0);
  std::vector<std::vector<double>> v(rows, std::vector<double>(cols));
  for (auto& row : v) {
    for (double& x : row) x = draw(rng);
  }
  return v;
}

Tensor to_tensor(const std::vector<std::vector<double>>& v) {
  Tensor t(Shape(v.size(), v[0].size()));
  for (std::size_t r = 0; r < v.size(); ++r) {
    for (std::size_t c = 0; c < v[0].size(); ++c) t(r, c) = v[r][c];
  }
  return t;
}

Outcome snr_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  const std::pair<Axes, testing::Reduce> pairs[] = {{Axes::FanOut, testing::Reduce::Rows},
                                                    {Axes::FanIn, testing::Reduce::Cols},
                                                    {Axes::Both, testing::Reduce::All}};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_matrix(rng, 5, 7);
    const Tensor t = to_tensor(v);
    for (const auto& [k, how] : pairs) {
      const double want = testing::brute_snr(v, how, kDefaultSnrEps);
      worst = std::max(worst, std::abs(snr_k(t, k) - want) / std::abs(want));
    }
  }
  const double worked = snr_k(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}), Axes::FanIn, 0.0);
  std::ostringstream os;
  os << "max rel err " << worst << ", worked value " << worked;
  return {worst <= 1e-10 && std::abs(worked - 21.75) <= 1e-12, os.str()};
}

Outcome scale_invariance() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  bool argmax_stable = true;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor v = to_tensor(random_matrix(rng, 6, 9));
    std::map<Axes, double> base;
    for (Axes k : {Axes::FanOut, Axes::FanIn, Axes::Both}) base[k] = snr_k(v, k, 0.0);
    const auto best = [](const std::map<Axes, double>& m) {
      return std::max_element(m.begin(), m.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    };
    for (double c : {1e-6, 1.0, 1e6}) {
      Tensor scaled = v;
      for (double& x : scaled.data()) x *= c;
      std::map<Axes, double> s;
      for (Axes k : {Axes::FanOut, Axes::FanIn, Axes::Both}) {
        s[k] = snr_k(scaled, k, 0.0);
        worst = std::max(worst, std::abs(s[k] - base[k]) / base[k]);
      }
      argmax_stable = argmax_stable && best(s) == best(base);
    }
  }
  std::ostringstream os;
  os << "max rel change " << worst << (argmax_stable ? ", argmax stable" : ", argmax changed");
  return {worst <= 1e-10 && argmax_stable, os.str()};
}

Outcome constant_gradient() {
  const std::size_t rows = 6, cols = 5;
  double worst = 0.0;
  for (Axes k : {Axes::FanOut, Axes::FanIn, Axes::Both}) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> normal;
    MomentState shared = MomentState::zeros(Shape(rows, cols), k);
    MomentState full = MomentState::zeros(Shape(rows, cols), Axes::None);
    Tensor ws(Shape(rows, cols), 0.3), wf(Shape(rows, cols), 0.3);
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
      for (std::size_t i = 0; i < ws.size(); ++i) worst = std::max(worst, std::abs(ws[i] - wf[i]) / std::abs(wf[i]));
    }
  }
  std::ostringstream os;
  os << "max rel diff over 200 steps " << worst;
  return {worst <= 1e-12, os.str()};
}

Outcome savings_accounting() {
  const Census census = census_of(gpt2_small_spec());
  const double f = savings_fraction(census, canonical_rules(census));
  std::ostringstream os;
  os << "savings " << f;
  return {f >= 0.97 && f <= 0.995, os.str()};
}

// Desk-scale linear token model for the vocabulary experiment.
TrainConfig vocab_config() {
  return parse_config(R"({"model":"linear_token","d_model":32,"context":64,"batch":4,"steps":1000,
    "warmup":200,"lr":0.01,"beta2":0.999,"weight_decay":0.0001,"weight_tying":false,
    "stream_length":300000,"eval_batches":8})")
      .train;
}

Outcome vocab_trend() {
  const TrainConfig base = vocab_config();
  const VocabCell embd{Axes::FanIn, Axes::FanIn};
  const VocabCell token{Axes::FanOut, Axes::FanOut};
  // The seed-0 Adam run at the largest vocab doubles as the reference for the
  // two compression cells, so it is not trained twice.
  VocabResult trend = vocab_experiment(base, {64, 256, 1024}, {}, {0, 1, 2});
  const VocabResult rest = vocab_experiment(base, {4096}, {}, {1, 2});
  const VocabResult gap = vocab_experiment(base, {4096}, {embd, token}, {0});
  trend.snr.insert(trend.snr.end(), rest.snr.begin(), rest.snr.end());
  trend.snr.insert(trend.snr.end(), gap.snr.begin(), gap.snr.end());
  std::vector<double> v, s;
  for (const VocabSnrRow& r : trend.snr) {
    v.push_back(static_cast<double>(r.vocab));
    s.push_back(r.token_snr);
  }
  const double rho = spearman(v, s);

  double embd_dl = 0.0, token_dl = 0.0;
  bool diverged = false;
  for (const VocabRow& r : gap.rows) {
    diverged = diverged || r.diverged;
    if (r.cell.embd == Axes::FanIn) embd_dl = r.delta_loss;
    if (r.cell.embd == Axes::FanOut) token_dl = r.delta_loss;
  }
  std::ostringstream os;
  os << "spearman " << rho << ", dL embedding-dim " << embd_dl << ", dL token-dim " << token_dl;
  return {!diverged && rho <= -0.8 && embd_dl <= 0.02 && token_dl > 0.02, os.str()};
}

// Desk-scale MiniTransformer shared by the lr sweep and SNR-vs-lr checks.
TrainConfig transformer_config() {
  return parse_config(R"({"model":"mini_transformer","vocab":256,"d_model":32,"n_layers":2,"n_heads":4,
    "context":32,"batch":8,"steps":2000,"warmup":200,"stream_length":400000,"eval_batches":8})")
      .train;
}

// The same model on the bundled character corpus, where attention has
// sequential structure to learn. Reported alongside, not judged.
TrainConfig corpus_config() {
  TrainConfig c = transformer_config();
  c.model.vocab = 32;
  c.data.source = DataSource::Corpus;
  c.data.corpus_path = SLIM_CORPUS_PATH;
  return c;
}

const std::vector<double> kLrGrid{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};

Outcome lr_robustness_on(TrainConfig base) {
  base.derive.cutoff = 1.0;
  base.derive_lr_factor = 0.1;
  const SweepResult r = lr_sweep(base, kLrGrid, {"adam", "slimadam"});
  const auto adam_i = argmin_lr(r, "adam", kLrGrid);
  const auto slim_i = argmin_lr(r, "slimadam", kLrGrid);
  if (!adam_i || !slim_i) return {false, "every run diverged for one optimizer"};
  auto best = [&](const std::string& opt, std::size_t i) {
    for (const SweepRow& row : r.rows) {
      if (row.optimizer == opt && row.lr == kLrGrid[i]) return row.loss;
    }
    return std::nan("");
  };
  const double adam_best = best("adam", *adam_i);
  const double slim_best = best("slimadam", *slim_i);
  const double rel = (slim_best - adam_best) / adam_best;
  const auto steps_apart = static_cast<long>(*adam_i) - static_cast<long>(*slim_i);
  std::ostringstream os;
  os << "adam best " << adam_best << " at " << kLrGrid[*adam_i] << ", slimadam best " << slim_best << " at "
     << kLrGrid[*slim_i] << ", rel gap " << rel;
  return {rel <= 0.02 && std::abs(steps_apart) <= 1, os.str()};
}

Outcome snr_lr_direction_on(const TrainConfig& base) {
  const std::vector<double> cutoffs{0.5, 1.0, 2.0, 4.0};
  const SnrLrResult r = snr_vs_lr(base, kLrGrid, cutoffs);
  std::map<LayerType, std::pair<std::vector<double>, std::vector<double>>> series;
  for (const SnrLrRow& row : r.snr) {
    if (row.diverged) continue;
    series[row.layer_type].first.push_back(row.lr);
    series[row.layer_type].second.push_back(row.snr);
  }
  bool pass = !series.empty();
  std::ostringstream os;
  for (const auto& [type, xy] : series) {
    const double rho = spearman(xy.first, xy.second);
    os << to_string(type) << ' ' << rho << "; ";
    pass = pass && rho <= 0.0;
  }
  for (double c : cutoffs) {
    std::vector<SavingsRow> ok;
    for (const SavingsRow& s : r.savings) {
      if (s.cutoff == c && !s.diverged) ok.push_back(s);
    }
    if (ok.size() < 2) {
      pass = false;
      continue;
    }
    const auto by_lr = [](const SavingsRow& a, const SavingsRow& b) { return a.lr < b.lr; };
    const SavingsRow lo = *std::min_element(ok.begin(), ok.end(), by_lr);
    const SavingsRow hi = *std::max_element(ok.begin(), ok.end(), by_lr);
    os << "cutoff " << c << ": " << lo.savings << " vs " << hi.savings << "; ";
    pass = pass && lo.savings >= hi.savings;
  }
  return {pass, os.str()};
}

Outcome lr_robustness() { return lr_robustness_on(transformer_config()); }
Outcome snr_lr_direction() { return snr_lr_direction_on(transformer_config()); }

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

Outcome gradient_correctness() {
  ModelSpec linear;
  linear.kind = ModelKind::LinearTokenModel;
  linear.vocab = 13;
  linear.d_model = 6;
  linear.context = 4;
  ModelSpec mlp;
  mlp.kind = ModelKind::MLPClassifier;
  mlp.vocab = 3;
  mlp.d_model = 10;
  mlp.n_layers = 2;
  mlp.input_dim = 4;
  ModelSpec transformer;
  transformer.vocab = 11;
  transformer.d_model = 8;
  transformer.n_layers = 2;
  transformer.n_heads = 2;
  transformer.context = 5;
  transformer.init_std = 0.3;
  std::vector<ModelSpec> specs{linear, mlp, transformer};
  for (ModelSpec s : {linear, transformer}) {
    s.weight_tying = false;
    specs.push_back(s);
  }
  double worst = 0.0;
  for (const ModelSpec& spec : specs) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const Model m = build_model(spec, seed);
      const Batch batch = spec.kind == ModelKind::MLPClassifier ? Batch(make_blobs(12, spec.input_dim, spec.vocab, seed))
                                                                : Batch(random_tokens(2, spec.context, spec.vocab, seed));
      worst = std::max(worst, grad_check(m, batch, GradCheckOptions{1e-5, 6, seed}));
    }
  }
  std::ostringstream os;
  os << "max rel err " << worst;
  return {worst < 1e-4, os.str()};
}

// Runs the CLI into `dir` and returns every output file keyed by name.
std::map<std::string, std::string> run_cli(const std::string& args, const fs::path& dir, int& status) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cmd = std::string("\"") + SLIM_CLI_PATH + "\" " + args + " --out \"" + dir.string() + "\" > \"" +
                          (dir / "stdout.txt").string() + "\" 2>&1";
  status = std::system(cmd.c_str());
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) files[entry.path().filename().string()] = read_file(entry.path());
  return files;
}

Outcome determinism_and_formats() {
  const fs::path root = fs::temp_directory_path() / "slim_acceptance_cli";
  fs::create_directories(root);
  write_file(root / "tiny.json", R"({"model":"mini_transformer","vocab":32,"d_model":16,"n_layers":1,"n_heads":2,
    "context":8,"batch":4,"steps":60,"warmup":6,"stream_length":6000,"lrs":[0.001,0.01],"cutoffs":[0.5,2],
    "vocabs":[16,32],"seeds":[0]})");
  write_file(root / "vocab.json", R"({"model":"linear_token","d_model":8,"context":8,"batch":4,"steps":40,
    "warmup":4,"stream_length":4000,"vocabs":[16,32],"seeds":[0,1]})");
  const std::string tiny = "--config \"" + (root / "tiny.json").string() + "\"";
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train " + tiny},
      {"vocab", "vocab-exp --config \"" + (root / "vocab.json").string() + "\""},
      {"sweep", "lr-sweep " + tiny},
      {"snr_lr", "snr-vs-lr " + tiny},
      {"derive", "derive-rules " + tiny},
      {"savings", "savings " + tiny + " --census gpt2_small"},
      {"census", "census " + tiny},
  };
  std::ostringstream os;
  bool pass = true;
  for (const auto& [name, args] : commands) {
    int s1 = 0, s2 = 0;
    const auto a = run_cli(args, root / (name + "_a"), s1);
    const auto b = run_cli(args, root / (name + "_b"), s2);
    if (s1 != 0 || s2 != 0) {
      os << name << " exit " << s1 << "; ";
      pass = false;
    } else if (a != b) {
      os << name << " differs; ";
      pass = false;
    }
  }

  // Round trips of the two text formats produced by a training run.
  const fs::path train_dir = root / "train_a";
  if (fs::exists(train_dir / "rules.txt") && fs::exists(train_dir / "snr.csv")) {
    const std::string rules = read_file(train_dir / "rules.txt");
    const std::string snr = read_file(train_dir / "snr.csv");
    if (serialize_rules(parse_rules(rules)) != rules) {
      os << "rules.txt round trip differs; ";
      pass = false;
    }
    if (format_snr_csv(parse_snr_csv(snr)) != snr || parse_snr_csv(snr).empty()) {
      os << "snr.csv round trip differs; ";
      pass = false;
    }
  } else {
    os << "train outputs missing; ";
    pass = false;
  }
  // A derived (non-empty) rule set through the parser too.
  const fs::path derive_dir = root / "derive_a";
  if (fs::exists(derive_dir / "rules.txt")) {
    const std::string rules = read_file(derive_dir / "rules.txt");
    if (serialize_rules(parse_rules(rules)) != rules) {
      os << "derived rules round trip differs; ";
      pass = false;
    }
  }
  if (pass) os << "7 subcommands byte-identical on rerun, formats round-trip";
  fs::remove_all(root);
  return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    std::string name;
    std::function<Outcome()> check;
    double limit_seconds;  // 0: no runtime bound
  };
  const std::vector<Criterion> criteria{
      {"1 adam-equivalence", adam_equivalence, 10},
      {"2 snr-oracle", snr_oracle, 5},
      {"3 scale-invariance", scale_invariance, 0},
      {"4 constant-gradient", constant_gradient, 0},
      {"5 savings-accounting", savings_accounting, 1},
      {"6 vocab-tail-trend", vocab_trend, 15 * 60},
      {"7 lr-robustness", lr_robustness, 30 * 60},
      {"8 snr-vs-lr-direction", snr_lr_direction, 0},
      {"9 gradient-correctness", gradient_correctness, 60},
      {"10 determinism-formats", determinism_and_formats, 0},
  };
  // Optional filter: run only the criteria whose numbers are given (`info` for
  // the corpus comparison).
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, check, limit] : criteria) {
    const std::string number = name.substr(0, name.find(' '));
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit > 0 && secs > limit) {
      o.pass = false;
      o.detail += "; over the " + std::to_string(static_cast<int>(limit)) + " s budget";
    }
    std::printf("%s criterion %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  // Criteria 7 and 8 again on the character corpus, for comparison only.
  const bool want_info = only.empty() || std::find(only.begin(), only.end(), "info") != only.end();
  if (want_info) {
    for (const auto& [name, check] : std::vector<std::pair<std::string, std::function<Outcome()>>>{
             {"7 lr-robustness", [] { return lr_robustness_on(corpus_config()); }},
             {"8 snr-vs-lr-direction", [] { return snr_lr_direction_on(corpus_config()); }}}) {
      Outcome o;
      try {
        o = check();
      } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
      }
      std::printf("INFO criterion %s on the character corpus (%s): %s\n", name.c_str(),
                  o.pass ? "holds" : "does not hold", o.detail.c_str());
      std::fflush(stdout);
    }
  }
  return failures == 0 ? 0 : 1;
}
