#include "slim/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "slim/errors.hpp"
#include "slim/io_util.hpp"

namespace slim {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::Zipf: return "zipf";
    case DataSource::Corpus: return "corpus";
    case DataSource::Blobs: return "blobs";
  }
  return "zipf";
}

std::optional<DataSource> parse_data_source(std::string_view token) {
  for (DataSource s : {DataSource::Zipf, DataSource::Corpus, DataSource::Blobs}) {
    if (token == to_string(s)) return s;
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  try {
    model.validate();
    hyper.validate();
    schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (batch == 0) throw ConfigError("batch must be positive");
  if (eval_batches == 0) throw ConfigError("eval_batches must be positive");
  if (!(derive.cutoff > 0.0)) throw ConfigError("cutoff must be positive");
  if (!(derive_lr_factor > 0.0)) throw ConfigError("derive_lr_factor must be positive");
  if (!(eps_snr >= 0.0)) throw ConfigError("eps_snr must be non-negative");
  if (!(data.heldout_fraction > 0.0 && data.heldout_fraction < 1.0)) {
    throw ConfigError("heldout_fraction must be in (0, 1)");
  }
  const bool tokens = model.kind != ModelKind::MLPClassifier;
  if (tokens == (data.source == DataSource::Blobs)) {
    throw ConfigError("data source `" + std::string(to_string(data.source)) + "` does not fit model `" +
                      std::string(to_string(model.kind)) + "`");
  }
  if (data.source == DataSource::Corpus && data.corpus_path.empty()) throw ConfigError("corpus source needs `corpus`");
}

namespace {

template <typename T>
T get_as(const json& value, std::string_view key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key `" + std::string(key) + "` has the wrong type");
  }
}

std::size_t get_size(const json& value, std::string_view key) {
  if (!value.is_number_integer() || value.get<long long>() < 0) {
    throw ConfigError("key `" + std::string(key) + "` must be a non-negative integer");
  }
  return value.get<std::size_t>();
}

double get_number(const json& value, std::string_view key) {
  if (!value.is_number()) throw ConfigError("key `" + std::string(key) + "` must be a number");
  return value.get<double>();
}

bool get_bool(const json& value, std::string_view key) {
  if (!value.is_boolean()) throw ConfigError("key `" + std::string(key) + "` must be true or false");
  return value.get<bool>();
}

template <typename T, typename F>
std::vector<T> get_list(const json& value, std::string_view key, F element) {
  if (!value.is_array() || value.empty()) throw ConfigError("key `" + std::string(key) + "` must be a non-empty list");
  std::vector<T> out;
  for (const json& v : value) out.push_back(element(v, key));
  return out;
}

using Setter = std::function<void(ConfigDocument&, const json&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"model",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         const auto kind = parse_model_kind(get_as<std::string>(v, k));
         if (!kind) throw ConfigError("unknown model `" + v.get<std::string>() + "`");
         d.train.model.kind = *kind;
       }},
      {"vocab", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.vocab = get_size(v, k); }},
      {"d_model", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.d_model = get_size(v, k); }},
      {"n_layers", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.n_layers = get_size(v, k); }},
      {"n_heads", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.n_heads = get_size(v, k); }},
      {"context", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.context = get_size(v, k); }},
      {"input_dim", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.input_dim = get_size(v, k); }},
      {"weight_tying",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.weight_tying = get_bool(v, k); }},
      {"init",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         const auto scheme = parse_init_scheme(get_as<std::string>(v, k));
         if (!scheme) throw ConfigError("unknown init `" + v.get<std::string>() + "`");
         d.train.model.init = *scheme;
       }},
      {"init_std", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.model.init_std = get_number(v, k); }},
      {"data",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         const auto source = parse_data_source(get_as<std::string>(v, k));
         if (!source) throw ConfigError("unknown data source `" + v.get<std::string>() + "`");
         d.train.data.source = *source;
       }},
      {"zipf_alpha", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.zipf_alpha = get_number(v, k); }},
      {"stream_length",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.stream_length = get_size(v, k); }},
      {"data_seed", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.seed = get_size(v, k); }},
      {"corpus",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.corpus_path = get_as<std::string>(v, k); }},
      {"blob_samples",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.blob_samples = get_size(v, k); }},
      {"heldout_fraction",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.data.heldout_fraction = get_number(v, k); }},
      {"lr", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.lr = get_number(v, k); }},
      {"beta1", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.beta1 = get_number(v, k); }},
      {"beta2", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.beta2 = get_number(v, k); }},
      {"eps", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.eps = get_number(v, k); }},
      {"weight_decay",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.weight_decay = get_number(v, k); }},
      {"clip_norm",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.train.hyper.clip_norm = v.is_null() ? std::nullopt : std::optional<double>(get_number(v, k));
       }},
      {"decay_vectors",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.hyper.decay_vectors = get_bool(v, k); }},
      {"warmup",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.train.schedule.warmup = static_cast<std::int64_t>(get_size(v, k));
       }},
      {"steps",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.train.schedule.total = static_cast<std::int64_t>(get_size(v, k));
       }},
      {"batch", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.batch = get_size(v, k); }},
      {"rules", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.rules = get_as<std::string>(v, k); }},
      {"cutoff", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.derive.cutoff = get_number(v, k); }},
      {"derive_mode",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         const auto mode = parse_derive_mode(get_as<std::string>(v, k));
         if (!mode) throw ConfigError("unknown derive_mode `" + v.get<std::string>() + "`");
         d.train.derive.mode = *mode;
       }},
      {"allow_both",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.derive.allow_both = get_bool(v, k); }},
      {"derive_lr_factor",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.derive_lr_factor = get_number(v, k); }},
      {"eps_snr", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.eps_snr = get_number(v, k); }},
      {"record_snr", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.record_snr = get_bool(v, k); }},
      {"eval_batches",
       [](ConfigDocument& d, const json& v, std::string_view k) { d.train.eval_batches = get_size(v, k); }},
      {"seed", [](ConfigDocument& d, const json& v, std::string_view k) { d.train.seed = get_size(v, k); }},
      {"vocabs",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.experiment.vocabs = get_list<std::size_t>(v, k, get_size);
       }},
      {"lrs",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.experiment.lrs = get_list<double>(v, k, get_number);
       }},
      {"cutoffs",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.experiment.cutoffs = get_list<double>(v, k, get_number);
       }},
      {"optimizers",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.experiment.optimizers =
             get_list<std::string>(v, k, [](const json& e, std::string_view key) { return get_as<std::string>(e, key); });
       }},
      {"seeds",
       [](ConfigDocument& d, const json& v, std::string_view k) {
         d.experiment.seeds = get_list<std::uint64_t>(v, k, get_size);
       }},
  };
  return table;
}

}  // namespace

ConfigDocument parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ConfigDocument out;
  for (const auto& [key, value] : doc.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key `" + key + "`");
    it->second(out, value, key);
  }
  out.train.schedule.peak_lr = out.train.hyper.lr;
  out.train.validate();
  return out;
}

std::string config_json(const ConfigDocument& doc) {
  const TrainConfig& c = doc.train;
  ordered_json j;
  j["model"] = std::string(to_string(c.model.kind));
  j["vocab"] = c.model.vocab;
  j["d_model"] = c.model.d_model;
  j["n_layers"] = c.model.n_layers;
  j["n_heads"] = c.model.n_heads;
  j["context"] = c.model.context;
  j["input_dim"] = c.model.input_dim;
  j["weight_tying"] = c.model.weight_tying;
  j["init"] = std::string(to_string(c.model.init));
  j["init_std"] = c.model.init_std;
  j["data"] = std::string(to_string(c.data.source));
  j["zipf_alpha"] = c.data.zipf_alpha;
  j["stream_length"] = c.data.stream_length;
  j["data_seed"] = c.data.seed.value_or(c.seed);
  j["corpus"] = c.data.corpus_path;
  j["blob_samples"] = c.data.blob_samples;
  j["heldout_fraction"] = c.data.heldout_fraction;
  j["lr"] = c.hyper.lr;
  j["beta1"] = c.hyper.beta1;
  j["beta2"] = c.hyper.beta2;
  j["eps"] = c.hyper.eps;
  j["weight_decay"] = c.hyper.weight_decay;
  j["clip_norm"] = c.hyper.clip_norm ? ordered_json(*c.hyper.clip_norm) : ordered_json(nullptr);
  j["decay_vectors"] = c.hyper.decay_vectors;
  j["warmup"] = c.schedule.warmup;
  j["steps"] = c.schedule.total;
  j["batch"] = c.batch;
  j["rules"] = c.rules;
  j["cutoff"] = c.derive.cutoff;
  j["derive_mode"] = std::string(to_string(c.derive.mode));
  j["allow_both"] = c.derive.allow_both;
  j["derive_lr_factor"] = c.derive_lr_factor;
  j["eps_snr"] = c.eps_snr;
  j["record_snr"] = c.record_snr;
  j["eval_batches"] = c.eval_batches;
  j["seed"] = c.seed;
  const ExperimentSpec& e = doc.experiment;
  j["vocabs"] = e.vocabs;
  j["lrs"] = e.lrs;
  j["optimizers"] = e.optimizers;
  j["cutoffs"] = e.cutoffs;
  j["seeds"] = e.seeds;
  return j.dump(2) + "\n";
}

namespace {

// Training batches and the fixed held-out set for one run.
class DataFeed {
 public:
  explicit DataFeed(const TrainConfig& cfg) : cfg_(cfg) {
    const std::uint64_t seed = cfg.data.seed.value_or(cfg.seed);
    switch (cfg.data.source) {
      case DataSource::Zipf: {
        const ZipfStream spec{cfg.model.vocab, cfg.data.zipf_alpha, cfg.data.stream_length, seed};
        init_tokens(zipf_token_stream(spec));
        break;
      }
      case DataSource::Corpus: {
        CharCorpus corpus = make_char_corpus(read_file(cfg.data.corpus_path));
        if (corpus.alphabet.size() > cfg.model.vocab) {
          throw ConfigError("corpus has " + std::to_string(corpus.alphabet.size()) + " distinct bytes but vocab is " +
                            std::to_string(cfg.model.vocab));
        }
        init_tokens(std::move(corpus.tokens));
        break;
      }
      case DataSource::Blobs: init_blobs(seed); break;
    }
  }

  Batch next() {
    if (stream_) return stream_->next();
    FeatureBatch b{Tensor(Shape(cfg_.batch, cfg_.model.input_dim)), std::vector<std::uint32_t>(cfg_.batch)};
    for (std::size_t i = 0; i < cfg_.batch; ++i) {
      if (cursor_ == order_.size()) shuffle();
      const std::size_t row = order_[cursor_++];
      b.labels[i] = train_.labels[row];
      for (std::size_t j = 0; j < cfg_.model.input_dim; ++j) b.features(i, j) = train_.features(row, j);
    }
    return b;
  }

  const std::vector<Batch>& heldout() const noexcept { return heldout_; }

 private:
  void init_tokens(std::vector<std::uint32_t> tokens) {
    Split split = split_stream(tokens, cfg_.data.heldout_fraction);
    for (TokenBatch& b : sequential_batches(split.heldout, cfg_.model.context, cfg_.batch, cfg_.eval_batches)) {
      heldout_.emplace_back(std::move(b));
    }
    stream_.emplace(std::move(split.train), cfg_.model.context, cfg_.batch, cfg_.seed);
  }

  void init_blobs(std::uint64_t seed) {
    const FeatureBatch all = make_blobs(cfg_.data.blob_samples, cfg_.model.input_dim, cfg_.model.vocab, seed);
    const auto n = all.labels.size();
    const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - cfg_.data.heldout_fraction)));
    if (cut == 0 || cut == n) throw ConfigError("blob_samples too small for the held-out split");
    const std::size_t dim = cfg_.model.input_dim;
    auto take = [&](std::size_t lo, std::size_t hi) {
      FeatureBatch b{Tensor(Shape(hi - lo, dim)), {all.labels.begin() + lo, all.labels.begin() + hi}};
      for (std::size_t i = lo; i < hi; ++i) {
        for (std::size_t j = 0; j < dim; ++j) b.features(i - lo, j) = all.features(i, j);
      }
      return b;
    };
    train_ = take(0, cut);
    heldout_.emplace_back(take(cut, n));
    order_.resize(cut);
    rng_.seed(cfg_.seed);
    shuffle();
  }

  void shuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  const TrainConfig& cfg_;
  std::optional<BatchStream> stream_;
  FeatureBatch train_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
  std::vector<Batch> heldout_;
};

double mean_heldout_loss(const Model& model, const std::vector<Batch>& batches) {
  double total = 0.0;
  for (const Batch& b : batches) total += forward_loss(model, b);
  return total / static_cast<double>(batches.size());
}

std::string lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

RuleSet resolve_rules(const TrainConfig& cfg, const Census& census) {
  const std::string& source = cfg.rules;
  if (source.starts_with("file:")) {
    try {
      return parse_rules(read_file(source.substr(5)));
    } catch (const ParseError& e) {
      throw ConfigError("rules file " + source.substr(5) + ": " + e.what());
    } catch (const InputError& e) {
      throw ConfigError(e.what());
    }
  }
  if (source == "canonical") return canonical_rules(census);
  if (source == "derived") {
    TrainConfig probe = cfg;
    probe.rules = "adam";
    probe.record_snr = true;
    probe.hyper.lr = cfg.hyper.lr * cfg.derive_lr_factor;
    probe.schedule.peak_lr = probe.hyper.lr;
    const TrainReport run = train_with_rules(probe, RuleSet{});
    if (run.snr.empty()) throw DivergenceError("rule-derivation run recorded no SNR before diverging");
    DeriveOptions opts = cfg.derive;
    opts.source_lr = probe.hyper.lr;
    opts.source = "adam-run seed=" + std::to_string(cfg.seed);
    return derive_rules(averaged_snr(run.snr), census, opts);
  }
  if (const auto b = parse_baseline(lower_ascii(source))) return make_baseline_rules(census, *b);
  throw ConfigError("unknown rules source `" + source + "`");
}

TrainReport train(const TrainConfig& cfg) {
  cfg.validate();
  return train_with_rules(cfg, resolve_rules(cfg, census_of(cfg.model)));
}

TrainReport train_with_rules(const TrainConfig& cfg, const RuleSet& rules) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  DataFeed feed(cfg);
  Model model = build_model(cfg.model, cfg.seed);
  report.census = model.census();
  report.rules = rules;
  report.savings = savings_report(report.census, rules);
  SharedMomentAdam opt(model, rules, cfg.hyper);

  const std::int64_t total = cfg.schedule.total;
  const std::vector<std::int64_t> grid = measurement_grid(total);
  report.snr = SnrTrajectory(grid);
  auto next_measure = grid.begin();

  for (std::int64_t t = 1; t <= total; ++t) {
    const Batch batch = feed.next();
    LossAndGrads lg = loss_and_grads(model, batch);
    if (!std::isfinite(lg.loss)) {
      report.diverged = true;
      report.divergence_reason = "non-finite loss at step " + std::to_string(t);
      break;
    }
    if (t == 1) {
      report.initial_loss = lg.loss;
      report.best_loss = lg.loss;
    } else if (lg.loss > 10.0 * report.initial_loss) {
      report.diverged = true;
      report.divergence_reason = "loss exceeded 10x its initial value at step " + std::to_string(t);
      break;
    }
    const double lr_t = lr_at(cfg.schedule, t);
    report.losses.push_back(LossRow{t, lg.loss, lr_t});
    report.final_loss = lg.loss;
    report.best_loss = std::min(report.best_loss, lg.loss);
    try {
      opt.step(model, lg.grads, lr_t);
    } catch (const DivergenceError& e) {
      report.diverged = true;
      report.divergence_reason = e.what();
      break;
    }
    if (cfg.record_snr && next_measure != grid.end() && *next_measure == t) {
      ++next_measure;
      std::vector<SnrSource> sources;
      for (const auto& slot : opt.slots()) {
        if (slot.state.k != Axes::None) continue;
        const ParamBlock& b = model.blocks()[slot.block];
        sources.push_back(SnrSource{b.name, b.layer_type, b.depth, &slot.state.v});
      }
      if (!sources.empty()) report.snr.record(t, sources, cfg.eps_snr);
    }
  }
  if (report.losses.empty()) report.final_loss = report.initial_loss = report.best_loss = std::nan("");
  report.heldout_loss = report.diverged ? report.final_loss : mean_heldout_loss(model, feed.heldout());
  if (!std::isfinite(report.heldout_loss)) {
    report.diverged = true;
    if (report.divergence_reason.empty()) report.divergence_reason = "non-finite held-out loss";
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::string format_losses_csv(const TrainReport& report) {
  std::ostringstream os;
  os << "step,loss,lr\n";
  for (const LossRow& r : report.losses) os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.lr) << '\n';
  return os.str();
}

void write_report(const TrainReport& report, const std::filesystem::path& dir) {
  write_file(dir / "losses.csv", format_losses_csv(report));
  write_file(dir / "snr.csv", format_snr_csv(report.snr));
  write_file(dir / "rules.txt", serialize_rules(report.rules));
  write_file(dir / "census.txt", format_census(report.census));
  ordered_json savings = ordered_json::parse(savings_json(report.savings));
  ordered_json summary;
  summary["initial_loss"] = report.initial_loss;
  summary["final_loss"] = report.final_loss;
  summary["best_loss"] = report.best_loss;
  summary["heldout_loss"] = report.heldout_loss;
  summary["diverged"] = report.diverged;
  summary["divergence_reason"] = report.divergence_reason;
  summary["steps_run"] = report.losses.size();
  summary["savings_fraction"] = report.savings.fraction;
  write_file(dir / "savings.json", savings.dump(2) + "\n");
  write_file(dir / "summary.json", summary.dump(2) + "\n");
}

std::vector<VocabCell> all_vocab_cells() {
  // Token dim is fan_out for both (vocab, d_model) blocks; embedding dim fan_in.
  constexpr Axes kinds[] = {Axes::None, Axes::FanOut, Axes::FanIn, Axes::Both};
  std::vector<VocabCell> cells;
  for (Axes e : kinds) {
    for (Axes h : kinds) cells.push_back(VocabCell{e, h});
  }
  return cells;
}

VocabResult vocab_experiment(const TrainConfig& base, const std::vector<std::size_t>& vocabs,
                             const std::vector<VocabCell>& cells, const std::vector<std::uint64_t>& seeds) {
  VocabResult result;
  for (std::size_t vocab : vocabs) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.kind = ModelKind::LinearTokenModel;
      cfg.model.weight_tying = false;
      cfg.model.vocab = vocab;
      cfg.seed = seed;
      cfg.data.seed = seed;
      cfg.record_snr = true;
      const TrainReport adam = train_with_rules(cfg, RuleSet{});
      if (adam.diverged) throw DivergenceError("Adam reference run diverged at vocab " + std::to_string(vocab));
      const AveragedSnr avg = averaged_snr(adam.snr);
      VocabSnrRow snr_row{vocab, seed, 0.0, 0.0};
      for (const char* block : {"wte", "lm_head"}) {
        snr_row.token_snr += avg.at({block, Axes::FanOut}) / 2.0;
        snr_row.embedding_snr += avg.at({block, Axes::FanIn}) / 2.0;
      }
      result.snr.push_back(snr_row);

      cfg.record_snr = false;
      for (const VocabCell& cell : cells) {
        VocabRow row{vocab, seed, cell, adam.heldout_loss, 0.0, false};
        if (cell.embd != Axes::None || cell.head != Axes::None) {
          RuleSet rules(Provenance{Provenance::Kind::Manual, "vocab-cell", 0.0, 0.0});
          rules.set("wte", cell.embd);
          rules.set("lm_head", cell.head);
          const TrainReport run = train_with_rules(cfg, rules);
          row.loss = run.heldout_loss;
          row.diverged = run.diverged;
        }
        row.delta_loss = row.loss - adam.heldout_loss;
        result.rows.push_back(row);
      }
    }
  }
  return result;
}

std::string format_vocab_csv(const VocabResult& result) {
  std::ostringstream os;
  os << "vocab,seed,k_embd,k_head,loss,delta_loss,diverged\n";
  for (const VocabRow& r : result.rows) {
    os << r.vocab << ',' << r.seed << ',' << to_string(r.cell.embd) << ',' << to_string(r.cell.head) << ','
       << format_double(r.loss) << ',' << format_double(r.delta_loss) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string format_vocab_snr_csv(const VocabResult& result) {
  std::ostringstream os;
  os << "vocab,seed,token_snr,embedding_snr\n";
  for (const VocabSnrRow& r : result.snr) {
    os << r.vocab << ',' << r.seed << ',' << format_double(r.token_snr) << ',' << format_double(r.embedding_snr)
       << '\n';
  }
  return os.str();
}

namespace {

SweepRow sweep_point(const TrainConfig& base, const std::string& name, double lr, const RuleSet& rules) {
  TrainConfig cfg = base;
  cfg.hyper.lr = lr;
  cfg.schedule.peak_lr = lr;
  cfg.record_snr = false;
  const TrainReport run = train_with_rules(cfg, rules);
  return SweepRow{name, lr, run.heldout_loss, run.diverged};
}

}  // namespace

std::optional<std::size_t> argmin_lr(const SweepResult& result, std::string_view optimizer,
                                     const std::vector<double>& lrs) {
  std::optional<std::size_t> best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const SweepRow& r : result.rows) {
    if (r.optimizer != optimizer || r.diverged || !(r.loss < best_loss)) continue;
    const auto it = std::find(lrs.begin(), lrs.end(), r.lr);
    if (it == lrs.end()) continue;
    best = static_cast<std::size_t>(it - lrs.begin());
    best_loss = r.loss;
  }
  return best;
}

SweepResult lr_sweep(const TrainConfig& base, const std::vector<double>& lrs,
                     const std::vector<std::string>& optimizers) {
  if (lrs.empty()) throw ConfigError("lr sweep needs at least one lr");
  base.validate();
  const Census census = census_of(base.model);
  SweepResult result;
  const bool want_slim = std::find(optimizers.begin(), optimizers.end(), "slimadam") != optimizers.end();
  const bool want_adam = std::find(optimizers.begin(), optimizers.end(), "adam") != optimizers.end();
  if (want_slim || want_adam) {
    for (double lr : lrs) result.rows.push_back(sweep_point(base, "adam", lr, RuleSet{}));
  }
  for (const std::string& name : optimizers) {
    if (name == "adam" || name == "slimadam") continue;
    TrainConfig named = base;
    named.rules = name;
    const RuleSet rules = resolve_rules(named, census);
    for (double lr : lrs) result.rows.push_back(sweep_point(base, name, lr, rules));
  }
  if (want_slim) {
    const auto best = argmin_lr(result, "adam", lrs);
    if (!best) throw DivergenceError("every Adam run in the sweep diverged; no lr to derive rules from");
    result.adam_best_lr = lrs[*best];
    TrainConfig derive = base;
    derive.rules = "derived";
    derive.hyper.lr = lrs[*best];
    derive.schedule.peak_lr = lrs[*best];
    result.slim_rules = resolve_rules(derive, census);
    for (double lr : lrs) result.rows.push_back(sweep_point(base, "slimadam", lr, *result.slim_rules));
  }
  if (!want_adam) {
    std::erase_if(result.rows, [](const SweepRow& r) { return r.optimizer == "adam"; });
  }
  return result;
}

std::string format_sweep_csv(const SweepResult& result) {
  std::ostringstream os;
  os << "optimizer,lr,loss,diverged\n";
  for (const SweepRow& r : result.rows) {
    os << r.optimizer << ',' << format_double(r.lr) << ',' << format_double(r.loss) << ',' << (r.diverged ? 1 : 0)
       << '\n';
  }
  return os.str();
}

SnrLrResult snr_vs_lr(const TrainConfig& base, const std::vector<double>& lrs, const std::vector<double>& cutoffs) {
  base.validate();
  SnrLrResult result;
  for (double lr : lrs) {
    TrainConfig cfg = base;
    cfg.hyper.lr = lr;
    cfg.schedule.peak_lr = lr;
    cfg.record_snr = true;
    const TrainReport run = train_with_rules(cfg, RuleSet{});
    if (run.snr.empty()) {
      for (double c : cutoffs) result.savings.push_back(SavingsRow{lr, c, 0.0, true});
      continue;
    }
    const AveragedSnr avg = averaged_snr(run.snr);
    const DepthAveragedSnr by_type = depth_averaged_snr(avg, run.census);
    std::map<LayerType, std::pair<Axes, double>> best;
    for (const auto& [key, value] : by_type) {
      auto [it, fresh] = best.try_emplace(key.first, key.second, value);
      if (!fresh && value > it->second.second) it->second = {key.second, value};
    }
    for (const auto& [type, kv] : best) result.snr.push_back(SnrLrRow{lr, type, kv.first, kv.second, run.diverged});
    for (double c : cutoffs) {
      DeriveOptions opts = base.derive;
      opts.cutoff = c;
      opts.source_lr = lr;
      const RuleSet rules = derive_rules(avg, run.census, opts);
      result.savings.push_back(SavingsRow{lr, c, savings_fraction(run.census, rules), run.diverged});
    }
  }
  return result;
}

std::string format_snr_lr_csv(const SnrLrResult& result) {
  std::ostringstream os;
  os << "lr,layer_type,k,snr,diverged\n";
  for (const SnrLrRow& r : result.snr) {
    os << format_double(r.lr) << ',' << to_string(r.layer_type) << ',' << to_string(r.k) << ','
       << format_double(r.snr) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string format_savings_surface_csv(const SnrLrResult& result) {
  std::ostringstream os;
  os << "lr,cutoff,savings,diverged\n";
  for (const SavingsRow& r : result.savings) {
    os << format_double(r.lr) << ',' << format_double(r.cutoff) << ',' << format_double(r.savings) << ','
       << (r.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t m = i; m <= j; ++m) r[idx[m]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InputError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace slim
