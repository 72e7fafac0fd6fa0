// cteg: synthesize data, train, generate, evaluate and verify.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include "cteg/binary_io.hpp"
#include "cteg/data_io.hpp"
#include "cteg/errors.hpp"
#include "cteg/metrics.hpp"
#include "cteg/runtime.hpp"
#include "cteg/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace cteg;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CTEG_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("CTEG_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

std::string manifest_path(const std::string& data) {
  return fs::is_directory(data) ? (fs::path(data) / "manifest.tsv").string() : data;
}

std::string slurp(const std::string& path) { return binary::read_file(path); }

struct TextSource {
  std::unique_ptr<TextEncoder> encoder;
  std::optional<PrecomputedEmbeddings> precomputed;

  Dataset load(const DatasetManifest& m, Split split) const {
    return precomputed ? load_examples(m, split, *precomputed) : load_examples(m, split, *encoder);
  }
};

TextSource make_text_source(const ModelConfig& cfg, const std::string& encoder, const std::string& embeddings) {
  TextSource src;
  if (encoder == "toy") {
    src.encoder = std::make_unique<ToyTextEncoder>(cfg.d_model, cfg.encoder_seed, cfg.max_text_len);
  } else if (encoder == "precomputed") {
    if (embeddings.empty()) throw UsageError("encoder 'precomputed' needs an embeddings directory");
    src.precomputed = PrecomputedEmbeddings::load(embeddings, cfg.d_model, cfg.max_text_len);
  } else {
    throw UsageError("unknown encoder '" + encoder + "' (valid: toy, precomputed)");
  }
  return src;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int pairs = 200;
  std::optional<std::uint64_t> seed;
  int min_len = 12;
  int max_len = 24;
  double noise = 0.02;
  double one_to_n = 0.15;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n_pairs = a.pairs;
  cfg.seed = resolve_seed(a.seed);
  cfg.min_len = a.min_len;
  cfg.max_len = a.max_len;
  cfg.noise = a.noise;
  cfg.one_to_n_fraction = a.one_to_n;
  const SynthSummary s = synth_dataset(cfg, a.out);
  std::cout << "pairs=" << s.manifest.records.size() << " frames=" << s.frames << " one_to_n=" << s.one_to_n
            << " train=" << s.manifest.split(Split::train).size() << " valid=" << s.manifest.split(Split::valid).size()
            << " test=" << s.manifest.split(Split::test).size() << " manifest="
            << (fs::path(a.out) / "manifest.tsv").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

// Run-file keys besides the model configuration.
const std::set<std::string> kRunKeys = {"data", "out", "encoder", "embeddings", "max_steps", "preset", "resume"};

int cmd_train(const std::string& config_path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp(config_path));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + config_path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config must be a JSON object");

  ModelConfig cfg;
  const std::string preset = doc.value("preset", std::string("desk"));
  if (preset == "desk") {
    cfg = ModelConfig::desk();
  } else if (preset != "full") {
    throw UsageError("unknown preset '" + preset + "' (valid: desk, full)");
  }
  if (!doc.contains("seed")) cfg.seed = resolve_seed(std::nullopt);

  nlohmann::json model_doc = nlohmann::json::object();
  for (const auto& [key, value] : doc.items()) {
    if (!kRunKeys.count(key)) model_doc[key] = value;
  }
  const auto unknown = apply_config(cfg, model_doc);
  if (!unknown.empty()) throw ConfigError(unknown.front(), "unknown configuration key '" + unknown.front() + "'");
  cfg.validate();

  auto get_string = [&](const char* key, const std::string& fallback) {
    if (!doc.contains(key)) return fallback;
    if (!doc[key].is_string()) throw ConfigError(key, std::string("'") + key + "' must be a string");
    return doc[key].get<std::string>();
  };
  const std::string data = get_string("data", "");
  const std::string out = get_string("out", "");
  if (data.empty()) throw ConfigError("data", "config needs 'data' (dataset directory or manifest)");
  if (out.empty()) throw ConfigError("out", "config needs 'out' (output directory)");
  long max_steps = -1;
  if (doc.contains("max_steps")) {
    if (!doc["max_steps"].is_number_integer()) throw ConfigError("max_steps", "'max_steps' must be an integer");
    max_steps = doc["max_steps"].get<long>();
  }

  const DatasetManifest manifest = load_manifest(manifest_path(data));
  const TextSource text = make_text_source(cfg, get_string("encoder", "toy"), get_string("embeddings", ""));
  const Dataset train_set = text.load(manifest, Split::train);
  const Dataset valid_set = text.load(manifest, Split::valid);
  if (train_set.empty()) throw ContractError("dataset has no training records");

  fs::create_directories(out);
  std::ofstream log((fs::path(out) / "loss_log.tsv").string());
  if (!log) throw IoError("cannot write loss log in '" + out + "'");
  log << "step\tepoch\tlr\tL_rec\tL_KL\tL_g\ttotal\tmean_abs_z\tgrad_norm\n";
  log << std::setprecision(10);

  std::optional<Checkpoint> resume;
  TrainOptions options;
  options.max_steps = max_steps;
  if (!valid_set.empty()) options.validation = &valid_set;
  const std::string resume_path = get_string("resume", "");
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    options.resume = &*resume;
  }
  int last_epoch = -1;
  double epoch_sum = 0.0;
  int epoch_steps = 0;
  options.on_step = [&](const TrainLogEntry& e) {
    log << e.step << '\t' << e.epoch << '\t' << e.lr << '\t' << e.rec << '\t' << e.kl << '\t' << e.guide << '\t'
        << e.total << '\t' << e.mean_abs_z << '\t' << e.grad_norm << '\n';
    if (e.epoch != last_epoch) {
      if (last_epoch >= 0) std::cout << "epoch " << last_epoch << " mean_total=" << epoch_sum / epoch_steps << '\n';
      last_epoch = e.epoch;
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
    epoch_sum += e.total;
    ++epoch_steps;
  };

  std::cout << "training on " << train_set.size() << " records (" << valid_set.size() << " validation)\n";
  const TrainResult result = train(cfg, train_set, options);
  if (last_epoch >= 0) std::cout << "epoch " << last_epoch << " mean_total=" << epoch_sum / epoch_steps << '\n';

  save_checkpoint(result.final_checkpoint, (fs::path(out) / "final.ckpt").string());
  save_checkpoint(result.best_checkpoint, (fs::path(out) / "best.ckpt").string());
  std::ofstream((fs::path(out) / "config.json").string()) << to_json(cfg).dump(2) << '\n';
  std::cout << "steps=" << result.final_checkpoint.cursor->step << " final=" << (fs::path(out) / "final.ckpt").string()
            << " best=" << (fs::path(out) / "best.ckpt").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt;
  std::string text;
  std::optional<std::uint64_t> seed;
  std::optional<int> msl;
  std::optional<double> threshold;
  int samples = 1;
  std::string out = ".";
  std::string prefix = "sample";
};

int cmd_generate(const GenerateArgs& a) {
  if (tokenize(a.text).empty()) throw UsageError("--text must not be empty");
  if (a.samples < 1) throw UsageError("--samples must be >= 1");
  const Model model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const ModelConfig& cfg = model.config();
  const ToyTextEncoder encoder(cfg.d_model, cfg.encoder_seed, cfg.max_text_len);
  const RngStream base(resolve_seed(a.seed));
  DecodeOptions opts{a.msl, a.threshold};
  fs::create_directories(a.out);
  for (int k = 0; k < a.samples; ++k) {
    RngStream rng = base.split(static_cast<std::uint64_t>(k));
    const DecodeResult r = decode(a.text, model, encoder, rng, opts);
    const std::string path = (fs::path(a.out) / (a.prefix + "_" + std::to_string(k) + ".exp")).string();
    const ExpressionSequence frames = r.frames.rows() > 0 ? r.frames : ExpressionSequence::Zero(1, kExpressionDim);
    write_sequence(frames, path);
    std::cout << "sample=" << k << " length=" << r.frames.rows() << " stop=" << to_string(r.reason)
              << " file=" << path << (r.frames.rows() == 0 ? " (empty, written as one zero frame)" : "") << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kMetricNames = {"diversity", "mmodality", "variation", "fgd",
                                               "dot",       "cppl",      "cppl-shuffled"};

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string metrics = "diversity,mmodality,variation,fgd,dot,cppl,cppl-shuffled";
  int bootstrap = 0;
  std::optional<std::uint64_t> seed;
  int n_d = 100;
  int n_m = 100;
  std::string split = "test";
  std::optional<int> msl;
  std::optional<double> threshold;
  double delta = 0.8;
  double sigma = 0.2;
  std::string encoder = "toy";
  std::string embeddings;
  std::string kv_out;
};

std::vector<std::string> parse_metric_list(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (std::find(kMetricNames.begin(), kMetricNames.end(), item) == kMetricNames.end()) {
      std::string valid;
      for (const auto& n : kMetricNames) valid += (valid.empty() ? "" : ", ") + n;
      throw UsageError("unknown metric '" + item + "' (valid: " + valid + ")");
    }
    out.push_back(item);
  }
  if (out.empty()) throw UsageError("--metrics is empty");
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw UsageError("unknown split '" + s + "' (valid: train, valid, test)");
}

template <class Unit>
std::optional<double> maybe_se(int iterations, const std::function<double(const std::vector<Unit>&)>& f,
                               const std::vector<Unit>& units, const RngStream& base, std::uint64_t key) {
  if (iterations <= 0) return std::nullopt;
  RngStream rng = base.split(key);
  return bootstrap_se(f, units, iterations, rng);
}

int cmd_eval(const EvalArgs& a) {
  const std::vector<std::string> wanted = parse_metric_list(a.metrics);
  if (a.bootstrap < 0 || a.bootstrap == 1) throw UsageError("--bootstrap must be 0 or >= 2");
  const Split split = parse_split(a.split);
  const Model model = model_from_checkpoint(load_checkpoint(a.ckpt));
  const ModelConfig& cfg = model.config();
  const TextSource text = make_text_source(cfg, a.encoder, a.embeddings);
  const Dataset data = text.load(load_manifest(manifest_path(a.data)), split);
  if (data.empty()) throw ContractError("split '" + a.split + "' has no records");

  const RngStream base(resolve_seed(a.seed));
  const DecodeOptions dopts{a.msl, a.threshold};
  const CpplOptions copts{a.delta, a.sigma};
  const int it = a.bootstrap;
  auto want = [&](const char* name) { return std::find(wanted.begin(), wanted.end(), name) != wanted.end(); };

  std::vector<ExpressionSequence> gt;
  std::vector<Matrix> texts;
  for (const TrainingExample& e : data) {
    gt.push_back(e.frames);
    texts.push_back(e.text_embedding);
  }

  std::vector<ExpressionSequence> generated;
  if (want("variation") || want("fgd") || want("dot")) {
    const ConditionalSampler sampler = text_sampler(model, dopts);
    const RngStream gen = base.split(1);
    for (std::size_t i = 0; i < data.size(); ++i) {
      RngStream rng = gen.split(i);
      generated.push_back(sampler(texts[i], rng));
    }
  }

  using Seqs = std::vector<ExpressionSequence>;
  const std::function<double(const std::vector<double>&)> mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const std::function<double(const Seqs&)> dot_fn = [](const Seqs& s) { return dot(s); };

  MetricReport report;
  auto add = [&](std::string name, double value, std::optional<double> se, std::size_t n, MetricParams params) {
    MetricParams p = params;
    if (it > 0) p.iterations = it;
    report.entries.push_back({std::move(name), value, se, n, p});
  };

  for (const std::string& m : wanted) {
    if (m == "diversity") {
      const DiversityResult r = diversity(null_text_sampler(model, dopts), a.n_d, base.split(2));
      const std::function<double(const std::vector<double>&)> f = [](const std::vector<double>& d) {
        return diversity_from_pairs(d);
      };
      add(m, r.value, maybe_se(it, f, r.pair_distances, base, 102), r.pair_distances.size(), {.n_d = a.n_d});
    } else if (m == "mmodality") {
      const MModalityResult r = mmodality(text_sampler(model, dopts), texts, a.n_m, base.split(3));
      add(m, r.value, maybe_se(it, mean_of, r.pair_distances, base, 103), r.pair_distances.size(), {.n_m = a.n_m});
    } else if (m == "variation") {
      std::vector<double> per;
      for (const auto& s : generated) per.push_back(sequence_variation(s));
      add(m, variation(generated), maybe_se(it, mean_of, per, base, 104), generated.size(), {});
    } else if (m == "fgd") {
      std::vector<double> per;
      for (const auto& s : generated) {
        if (s.rows() >= 2) per.push_back(sequence_fgd(s));
      }
      add(m, fgd(generated), per.empty() ? std::nullopt : maybe_se(it, mean_of, per, base, 105), per.size(), {});
    } else if (m == "dot") {
      add(m, dot(generated), maybe_se(it, dot_fn, generated, base, 106), generated.size(), {});
    } else if (m == "cppl" || m == "cppl-shuffled") {
      Dataset scored = data;
      if (m == "cppl-shuffled") {
        RngStream rng = base.split(4);
        const Seqs shuffled = shuffle_frames(gt, rng);
        for (std::size_t i = 0; i < scored.size(); ++i) scored[i].frames = shuffled[i];
      }
      const CpplResult r = cppl(model, scored, copts);
      const std::function<double(const std::vector<double>&)> f = [](const std::vector<double>& h) {
        return cppl_from_entropies(h).log2_value;
      };
      std::optional<double> se_log2 = maybe_se(it, f, r.entropies, base, m == "cppl" ? 107 : 108);
      add(m + ".log2", r.log2_value, se_log2, r.entropies.size(), {.delta = a.delta, .sigma = a.sigma});
      if (std::isfinite(r.value)) {
        const std::function<double(const std::vector<double>&)> g = [](const std::vector<double>& h) {
          return cppl_from_entropies(h).value;
        };
        add(m, r.value, maybe_se(it, g, r.entropies, base, m == "cppl" ? 107 : 108), r.entropies.size(),
            {.delta = a.delta, .sigma = a.sigma});
      }
    }
  }

  // Ground-truth side, as a reference row.
  {
    std::vector<double> var_per, fgd_per;
    for (const auto& s : gt) {
      var_per.push_back(sequence_variation(s));
      if (s.rows() >= 2) fgd_per.push_back(sequence_fgd(s));
    }
    if (gt.size() >= 2) add("gt.dot", dot(gt), maybe_se(it, dot_fn, gt, base, 201), gt.size(), {});
    if (!fgd_per.empty()) add("gt.fgd", fgd(gt), maybe_se(it, mean_of, fgd_per, base, 202), fgd_per.size(), {});
    add("gt.variation", variation(gt), maybe_se(it, mean_of, var_per, base, 203), gt.size(), {});
  }

  std::cout << report.human() << '\n' << report.key_values();
  if (!a.kv_out.empty()) binary::write_file(a.kv_out, report.key_values());
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& sabotage, const std::string& work_dir) {
  VerifyOptions opts;
  if (sabotage == "kl") {
    opts.sabotage_kl = true;
  } else if (!sabotage.empty()) {
    throw UsageError("unknown --sabotage mode '" + sabotage + "' (valid: kl)");
  }
  opts.work_dir = work_dir;
  const auto results = run_verification(opts);
  std::cout << format_results(results);
  const bool ok = all_passed(results);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (ok ? "all " + std::to_string(results.size()) + " checks passed"
                   : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed")
            << '\n';
  return ok ? kOk : kRuntimeError;
}

int cmd_import_csv(const std::string& in, const std::string& out) {
  const ExpressionSequence s = read_csv_sequence(in);
  write_sequence(s, out);
  std::cout << "frames=" << s.rows() << " file=" << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-expression generator: synth, train, generate, eval, verify"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic dataset (manifest.tsv + seqs/*.exp)");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--pairs", synth.pairs, "Number of text/sequence pairs")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Random seed (default: CTEG_SEED or 0)");
  s->add_option("--min-len", synth.min_len, "Shortest sequence")->capture_default_str();
  s->add_option("--max-len", synth.max_len, "Longest sequence")->capture_default_str();
  s->add_option("--noise", synth.noise, "Gaussian noise stddev")->capture_default_str();
  s->add_option("--one-to-n", synth.one_to_n, "Fraction of records reusing an earlier text")->capture_default_str();

  std::string train_config;
  auto* t = app.add_subcommand("train", "Train from a JSON run file");
  t->add_option("--config", train_config,
                "JSON object: model keys (d_model, heads, d_ff, n_layers, msl, max_text_len, epochs, warmup, "
                "batch_size, stop_threshold, clip_norm, lr_scale, d_attn, ewa_heads, jaw_split, use_ewa, use_lta, "
                "use_lg, lta_mode, share_projection, sample_reconstruction, seed, encoder_seed) plus data, out, "
                "encoder (toy|precomputed), embeddings, max_steps, preset (desk|full), resume. "
                "Defaults: the desk preset.")
      ->required();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Decode sequences for a text");
  g->add_option("--ckpt", gen.ckpt, "Checkpoint file")->required();
  g->add_option("--text", gen.text, "Conditioning text")->required();
  g->add_option("--seed", gen.seed, "Random seed (default: CTEG_SEED or 0)");
  g->add_option("--msl", gen.msl, "Maximum sequence length (default: from checkpoint)");
  g->add_option("--threshold", gen.threshold, "Stop distance to the standard face (default: from checkpoint)");
  g->add_option("--samples", gen.samples, "Number of sequences")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->capture_default_str();
  g->add_option("--prefix", gen.prefix, "Output file prefix")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute evaluation metrics on a split");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory or manifest")->required();
  e->add_option("--metrics", ev.metrics, "Comma-separated metric names")->capture_default_str();
  e->add_option("--bootstrap", ev.bootstrap, "Bootstrap iterations for standard errors (0: off)")->capture_default_str();
  e->add_option("--seed", ev.seed, "Random seed (default: CTEG_SEED or 0)");
  e->add_option("--n-d", ev.n_d, "Diversity draws (even)")->capture_default_str();
  e->add_option("--n-m", ev.n_m, "MModality text draws")->capture_default_str();
  e->add_option("--split", ev.split, "train, valid or test")->capture_default_str();
  e->add_option("--msl", ev.msl, "Decode length limit (default: from checkpoint)");
  e->add_option("--threshold", ev.threshold, "Decode stop threshold (default: from checkpoint)");
  e->add_option("--delta", ev.delta, "Cppl interval half-width")->capture_default_str();
  e->add_option("--sigma", ev.sigma, "Cppl predictive stddev")->capture_default_str();
  e->add_option("--encoder", ev.encoder, "toy or precomputed")->capture_default_str();
  e->add_option("--embeddings", ev.embeddings, "Directory of <id>.emb files for the precomputed encoder");
  e->add_option("--kv-out", ev.kv_out, "Also write the key=value report to this file");

  std::string sabotage, work_dir;
  auto* v = app.add_subcommand("verify", "Run the built-in verification suite");
  v->add_option("--sabotage", sabotage, "Inject a fault to test the tester (kl)");
  v->add_option("--work-dir", work_dir, "Scratch directory for file round-trips");

  std::string csv_in, csv_out;
  auto* c = app.add_subcommand("import-csv", "Convert a CSV fixture (53 values per line) to a sequence file");
  c->add_option("--in", csv_in, "CSV file")->required();
  c->add_option("--out", csv_out, "Sequence file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train_config);
    if (g->parsed()) return cmd_generate(gen);
    if (e->parsed()) return cmd_eval(ev);
    if (v->parsed()) return cmd_verify(sabotage, work_dir);
    if (c->parsed()) return cmd_import_csv(csv_in, csv_out);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << (err.key().empty() ? "" : " (key '" + err.key() + "')") << '\n';
    return kUsageError;
  } catch (const DivergenceError& err) {
    std::cerr << "training diverged: " << err.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
