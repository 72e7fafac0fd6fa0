#include "cteg/verify.hpp"

#include "cteg/binary_io.hpp"
#include "cteg/cvad.hpp"
#include "cteg/data_io.hpp"
#include "cteg/metrics.hpp"
#include "cteg/model.hpp"
#include "cteg/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;

namespace cteg {

namespace {

using Clock = std::chrono::steady_clock;

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

template <class F>
CheckResult timed(std::string suite, std::string name, F&& body) {
  CheckResult r{std::move(suite), std::move(name), false, {}, 0.0};
  const auto start = Clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

// ---------------------------------------------------------------------------
// gradient checks

struct GradVariant {
  std::string name;
  ModelConfig config;
};

std::vector<GradVariant> grad_variants() {
  ModelConfig base;
  base.d_model = 16;
  base.heads = 2;
  base.d_ff = 32;
  base.msl = 16;
  base.seed = 11;
  std::vector<GradVariant> out;
  out.push_back({"full", base});
  ModelConfig pooled = base;
  pooled.lta_mode = LtaMode::mean_pool;
  pooled.share_projection = true;
  pooled.n_layers = 2;
  pooled.seed = 12;
  out.push_back({"pool+share+2layers", pooled});
  ModelConfig plain = base;
  plain.use_ewa = false;
  plain.use_lta = false;
  plain.use_lg = false;
  plain.sample_reconstruction = true;
  plain.seed = 13;
  out.push_back({"no-ewa/lta/lg", plain});
  return out;
}

std::string group_of(const std::string& name) {
  if (name.rfind("ewa.", 0) == 0) return "ewa";
  if (name == "guide.proj.w" || name == "guide.proj.b" || name.rfind("guide.", 0) == 0) return "guide";
  if (name.rfind("embed", 0) == 0 || name.rfind("out", 0) == 0) return "projections";
  if (name.rfind("cvad.", 0) == 0) {
    const auto dot = name.find('.', 5);
    const std::string rest = name.substr(dot + 1);
    if (rest.rfind("trunk.", 0) == 0) return "trunk";
    if (rest.rfind("posterior", 0) == 0 || rest.rfind("prior", 0) == 0) return "heads";
    if (rest.rfind("lta.", 0) == 0) return "lta";
    if (rest.rfind("gen.", 0) == 0) return "generation";
    if (rest.rfind("guide.", 0) == 0) return "guide";
  }
  return "other";
}

}  // namespace

std::vector<CheckResult> gradient_checks(double tolerance) {
  std::vector<CheckResult> results;
  for (const GradVariant& v : grad_variants()) {
    Model model(v.config);
    RngStream data_rng(v.config.seed + 100);
    const Matrix frames = data_rng.normal_matrix(3, kExpressionDim);
    const Matrix text = data_rng.normal_matrix(2, v.config.d_model);
    model.set_average_expression(data_rng.normal_matrix(1, kExpressionDim).row(0));
    const PreparedSample sample = prepare_targets(frames, model.average_expression(), v.config.msl);
    const std::uint64_t noise_seed = v.config.seed + 200;
    auto objective = [&]() {
      RngStream rng(noise_seed);
      return model.teacher_forced_forward(sample, text, rng).total;
    };

    std::map<std::string, std::vector<NamedTensor>> groups;
    for (const NamedTensor& p : model.parameters().all()) groups[group_of(p.name)].push_back(p);
    for (const auto& [group, params] : groups) {
      results.push_back(timed("gradient", v.name + "/" + group, [&](CheckResult& r) {
        const GradCheckResult g = grad_check(objective, params, 1e-5);
        r.passed = g.max_rel_error < tolerance;
        r.detail = "max rel err " + num(g.max_rel_error) + " at " + g.worst_parameter + "[" +
                   std::to_string(g.worst_index) + "], " + std::to_string(g.entries_checked) + " entries";
      }));
    }
  }
  return results;
}

// ---------------------------------------------------------------------------
// KL

namespace {

// Monte Carlo KL(q || p) for diagonal Gaussians: mean of log q(z) - log p(z), z ~ q.
double monte_carlo_kl(const RowVector& mu_q, const RowVector& lv_q, const RowVector& mu_p, const RowVector& lv_p,
                      int samples, RngStream& rng) {
  double total = 0.0;
  const Index d = mu_q.size();
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (Index k = 0; k < d; ++k) {
      const double sq = std::exp(0.5 * lv_q(k));
      const double sp = std::exp(0.5 * lv_p(k));
      const double z = mu_q(k) + sq * rng.normal();
      const double uq = (z - mu_q(k)) / sq;
      const double up = (z - mu_p(k)) / sp;
      log_ratio += -0.5 * uq * uq - std::log(sq) + 0.5 * up * up + std::log(sp);
    }
    total += log_ratio;
  }
  return total / samples;
}

}  // namespace

std::vector<CheckResult> kl_checks(bool sabotage) {
  const double sign = sabotage ? -1.0 : 1.0;
  std::vector<CheckResult> results;
  results.push_back(timed("kl", "closed form vs monte carlo (20 pairs, 1e5 samples)", [&](CheckResult& r) {
    RngStream rng(2024);
    double worst = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
      const Index d = 1 + static_cast<Index>(rng.below(4));
      const RowVector mu_q = rng.normal_matrix(1, d).row(0);
      const RowVector mu_p = rng.normal_matrix(1, d).row(0);
      RowVector lv_q(d), lv_p(d);
      for (Index k = 0; k < d; ++k) {
        lv_q(k) = 2.0 * rng.uniform() - 1.0;
        lv_p(k) = 2.0 * rng.uniform() - 1.0;
      }
      const double closed = sign * kl_term(mu_q, lv_q, mu_p, lv_p);
      RngStream mc_rng = rng.split(static_cast<std::uint64_t>(pair));
      const double mc = monte_carlo_kl(mu_q, lv_q, mu_p, lv_p, 100000, mc_rng);
      worst = std::max(worst, std::abs(closed - mc) / std::abs(mc));
    }
    r.passed = worst < 0.02;
    r.detail = "worst relative gap " + num(worst);
  }));
  results.push_back(timed("kl", "KL(q, q) == 0 exactly", [&](CheckResult& r) {
    RngStream rng(7);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const RowVector mu = 3.0 * rng.normal_matrix(1, 8).row(0);
      const RowVector lv = rng.normal_matrix(1, 8).row(0);
      worst = std::max(worst, std::abs(sign * kl_term(mu, lv, mu, lv)));
    }
    r.passed = worst == 0.0;
    r.detail = "max |KL| " + num(worst);
  }));
  results.push_back(timed("kl", "hand case mu_q=1, sigma=1, mu_p=0 gives 0.5 per dim", [&](CheckResult& r) {
    const Index d = 5;
    const double kl = sign * kl_term(RowVector::Ones(d), RowVector::Zero(d), RowVector::Zero(d), RowVector::Zero(d));
    r.passed = std::abs(kl / d - 0.5) < 1e-12;
    r.detail = "per dim " + num(kl / d);
  }));
  results.push_back(timed("kl", "tensor path equals closed form", [&](CheckResult& r) {
    RngStream rng(8);
    const GaussianDiag q{Tensor::constant(rng.normal_matrix(4, 6)), Tensor::constant(rng.normal_matrix(4, 6))};
    const GaussianDiag p{Tensor::constant(rng.normal_matrix(4, 6)), Tensor::constant(rng.normal_matrix(4, 6))};
    const Matrix steps = kl_per_step(q, p).value();
    double worst = 0.0;
    for (Index t = 0; t < 4; ++t) {
      const double ref = sign * kl_term(q.mu.value().row(t), q.log_var.value().row(t), p.mu.value().row(t),
                                        p.log_var.value().row(t));
      worst = std::max(worst, std::abs(steps(t, 0) - ref) / std::max(1.0, std::abs(ref)));
    }
    r.passed = worst < 1e-12;
    r.detail = "max rel diff " + num(worst);
  }));
  return results;
}

// ---------------------------------------------------------------------------
// metric oracles: plain nested loops over std::vector, no Eigen, no sharing
// with the metric implementations.

namespace {

using Frames = std::vector<std::vector<double>>;

Frames to_frames(const Matrix& m) {
  Frames f(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) f[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return f;
}

double ref_frame_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

double ref_seq_distance(const Frames& a, const Frames& b) {
  const std::size_t n = a.size() < b.size() ? a.size() : b.size();
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) s += ref_frame_dist(a[t], b[t]);
  return s / static_cast<double>(n);
}

double ref_variation(const std::vector<Frames>& seqs, bool temporal) {
  double outer = 0.0;
  for (const Frames& s : seqs) {
    double inner = 0.0;
    if (!temporal) {
      for (const auto& frame : s) {
        double mean = 0.0;
        for (double v : frame) mean += v;
        mean /= static_cast<double>(frame.size());
        double var = 0.0;
        for (double v : frame) var += (v - mean) * (v - mean);
        inner += var / static_cast<double>(frame.size());
      }
      inner /= static_cast<double>(s.size());
    } else {
      const std::size_t d = s[0].size();
      for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (const auto& frame : s) mean += frame[k];
        mean /= static_cast<double>(s.size());
        double var = 0.0;
        for (const auto& frame : s) var += (frame[k] - mean) * (frame[k] - mean);
        inner += var / static_cast<double>(s.size());
      }
      inner /= static_cast<double>(d);
    }
    outer += inner;
  }
  return outer / static_cast<double>(seqs.size());
}

double ref_fgd(const std::vector<Frames>& seqs) {
  double outer = 0.0;
  int used = 0;
  for (const Frames& s : seqs) {
    if (s.size() < 2) continue;
    double inner = 0.0;
    for (std::size_t j = 0; j + 1 < s.size(); ++j) inner += ref_frame_dist(s[j + 1], s[j]);
    outer += inner / static_cast<double>(s.size() - 1);
    ++used;
  }
  return outer / used;
}

double ref_dot(const std::vector<Frames>& seqs) {
  const double n = static_cast<double>(seqs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      if (i < j) s += ref_seq_distance(seqs[i], seqs[j]);
    }
  }
  return 2.0 * s / (n * (n - 1.0));
}

double ref_phi(double z) { return 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

double ref_cppl(const std::vector<Frames>& xs, const std::vector<Frames>& mus, double delta, double sigma) {
  double h_total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double h = 0.0;
    for (std::size_t t = 0; t < xs[i].size(); ++t) {
      double p = 1.0;
      for (std::size_t k = 0; k < xs[i][t].size(); ++k) {
        const double x = xs[i][t][k];
        const double mu = mus[i][t][k];
        p *= ref_phi((x + delta - mu) / sigma) - ref_phi((x - delta - mu) / sigma);
      }
      h += -std::log2(p);
    }
    h_total += h / static_cast<double>(xs[i].size());
  }
  return std::pow(2.0, h_total / static_cast<double>(xs.size()));
}

double ref_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

std::vector<Matrix> random_sequences(RngStream& rng, int count, int min_t, int max_t) {
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) {
    const Index t = min_t + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_t - min_t + 1)));
    out.push_back(rng.normal_matrix(t, kExpressionDim));
  }
  return out;
}

}  // namespace

std::vector<CheckResult> metric_oracle_checks(double tol) {
  std::vector<CheckResult> results;
  RngStream rng(31337);
  const std::vector<Matrix> seqs = random_sequences(rng, 10, 2, 8);
  std::vector<Frames> ref;
  for (const Matrix& s : seqs) ref.push_back(to_frames(s));

  results.push_back(timed("metrics", "seq_distance", [&](CheckResult& r) {
    double worst = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (std::size_t j = 0; j < seqs.size(); ++j) {
        worst = std::max(worst, std::abs(seq_distance(seqs[i], seqs[j]) - ref_seq_distance(ref[i], ref[j])));
      }
    }
    r.passed = worst <= tol;
    r.detail = "max abs diff " + num(worst);
  }));
  results.push_back(timed("metrics", "diversity", [&](CheckResult& r) {
    std::size_t next = 0;
    SequenceSampler sampler = [&](RngStream&) { return seqs[next++ % seqs.size()]; };
    const double got = diversity(sampler, 10, RngStream(1)).value;
    double want = 0.0;
    for (std::size_t i = 0; i < 10; i += 2) want += ref_seq_distance(ref[i], ref[i + 1]);
    want /= 10.0;
    r.passed = close(got, want, tol);
    r.detail = num(got) + " vs " + num(want);
  }));
  results.push_back(timed("metrics", "mmodality", [&](CheckResult& r) {
    std::vector<Frames> drawn;
    ConditionalSampler sampler = [&](const Matrix& text, RngStream& s) {
      Matrix out = s.normal_matrix(1 + static_cast<Index>(s.below(8)), kExpressionDim);
      out.array() += text(0, 0);
      drawn.push_back(to_frames(out));
      return out;
    };
    std::vector<Matrix> texts;
    for (int i = 0; i < 3; ++i) texts.push_back(rng.normal_matrix(1, 4));
    const double got = mmodality(sampler, texts, 10, RngStream(2)).value;
    double want = 0.0;
    for (std::size_t i = 0; i < drawn.size(); i += 2) want += ref_seq_distance(drawn[i], drawn[i + 1]);
    want /= 10.0;
    r.passed = drawn.size() == 20 && close(got, want, tol);
    r.detail = num(got) + " vs " + num(want);
  }));
  results.push_back(timed("metrics", "variation (literal and temporal)", [&](CheckResult& r) {
    const double a = variation(seqs), b = ref_variation(ref, false);
    const double c = variation(seqs, VariationMode::temporal), d = ref_variation(ref, true);
    r.passed = close(a, b, tol) && close(c, d, tol);
    r.detail = num(a) + " vs " + num(b) + "; " + num(c) + " vs " + num(d);
  }));
  results.push_back(timed("metrics", "fgd", [&](CheckResult& r) {
    const double a = fgd(seqs), b = ref_fgd(ref);
    r.passed = close(a, b, tol);
    r.detail = num(a) + " vs " + num(b);
  }));
  results.push_back(timed("metrics", "dot", [&](CheckResult& r) {
    const double a = dot(seqs), b = ref_dot(ref);
    r.passed = close(a, b, tol);
    r.detail = num(a) + " vs " + num(b);
  }));
  results.push_back(timed("metrics", "cppl", [&](CheckResult& r) {
    std::vector<Matrix> means;
    std::vector<Frames> ref_means;
    for (const Matrix& s : seqs) {
      means.push_back(s + 0.3 * rng.normal_matrix(s.rows(), s.cols()));
      ref_means.push_back(to_frames(means.back()));
    }
    const double a = cppl_from_means(seqs, means).value, b = ref_cppl(ref, ref_means, 0.8, 0.2);
    r.passed = close(a, b, tol);
    r.detail = num(a) + " vs " + num(b);
  }));
  results.push_back(timed("metrics", "cppl anchor (d=1, T=1, exact mean)", [&](CheckResult& r) {
    const Matrix x = Matrix::Constant(1, 1, 0.37);
    const double got = cppl_from_means({x}, {x}).value;
    const double want = 1.0 / (ref_phi(4.0) - ref_phi(-4.0));
    r.passed = std::abs(got - 1.0000633) < 1e-6 && close(got, want, tol);
    r.detail = num(got);
  }));
  results.push_back(timed("metrics", "shuffle_frames", [&](CheckResult& r) {
    RngStream a(5), b(5);
    const auto s1 = shuffle_frames(seqs, a);
    const auto s2 = shuffle_frames(seqs, b);
    bool ok = s1.size() == seqs.size();
    for (std::size_t i = 0; ok && i < seqs.size(); ++i) {
      Frames x = ref[i], y = to_frames(s1[i]);
      std::sort(x.begin(), x.end());
      std::sort(y.begin(), y.end());
      ok = x == y && s1[i] == s2[i];
    }
    r.passed = ok;
    r.detail = ok ? "frame multisets preserved, reproducible" : "mismatch";
  }));
  results.push_back(timed("metrics", "bootstrap_se", [&](CheckResult& r) {
    std::vector<double> units;
    for (const Matrix& s : seqs) units.push_back(sequence_fgd(s));
    std::function<double(const std::vector<double>&)> mean_fn = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    RngStream a(77);
    const double got = bootstrap_se(mean_fn, units, 200, a);
    RngStream b(77);
    std::vector<double> stats;
    for (int it = 0; it < 200; ++it) {
      double s = 0.0;
      for (std::size_t k = 0; k < units.size(); ++k) s += units[b.below(units.size())];
      stats.push_back(s / static_cast<double>(units.size()));
    }
    const double want = ref_std(stats);
    r.passed = close(got, want, tol);
    r.detail = num(got) + " vs " + num(want);
  }));
  return results;
}

// ---------------------------------------------------------------------------
// formats

std::vector<CheckResult> format_checks(const std::string& work_dir) {
  std::vector<CheckResult> results;
  fs::path dir = work_dir.empty() ? fs::temp_directory_path() / ("cteg_verify_" + std::to_string(::getpid()))
                                  : fs::path(work_dir);
  fs::create_directories(dir);
  RngStream rng(99);

  results.push_back(timed("formats", "sequence file round-trip", [&](CheckResult& r) {
    const Matrix m = rng.normal_matrix(10, kExpressionDim).cast<float>().cast<double>();
    const std::string path = (dir / "seq.exp").string();
    write_sequence(m, path);
    const Matrix back = read_sequence(path);
    r.passed = back == m && binary::read_file(path) == encode_matrix_file(back);
    r.detail = r.passed ? "bitwise equal" : "mismatch";
  }));
  results.push_back(timed("formats", "embedding file round-trip", [&](CheckResult& r) {
    const Matrix m = rng.normal_matrix(3, 16).cast<float>().cast<double>();
    fs::create_directories(dir / "emb");
    write_embedding(m, (dir / "emb" / "rec1.emb").string());
    const PrecomputedEmbeddings e = PrecomputedEmbeddings::load((dir / "emb").string(), 16);
    r.passed = e.get("rec1") == m;
    r.detail = r.passed ? "equal" : "mismatch";
  }));
  results.push_back(timed("formats", "manifest round-trip", [&](CheckResult& r) {
    DatasetManifest man;
    man.records = {{"a", Split::train, "i am happy", "seq.exp"}, {"b", Split::test, "so sad", "seq.exp"}};
    const std::string path = (dir / "manifest.tsv").string();
    write_manifest(man, path);
    const DatasetManifest back = load_manifest(path);
    bool ok = back.records.size() == 2;
    for (std::size_t i = 0; ok && i < 2; ++i) {
      ok = back.records[i].id == man.records[i].id && back.records[i].split == man.records[i].split &&
           back.records[i].text == man.records[i].text && back.records[i].expr_path == man.records[i].expr_path;
    }
    r.passed = ok;
    r.detail = ok ? "records preserved" : "mismatch";
  }));
  results.push_back(timed("formats", "checkpoint round-trip", [&](CheckResult& r) {
    ModelConfig cfg = ModelConfig::desk();
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.d_ff = 32;
    Model model(cfg);
    model.set_average_expression(rng.normal_matrix(1, kExpressionDim).row(0));
    Checkpoint ckpt = make_checkpoint(model);
    AdamState adam;
    for (const NamedTensor& p : model.parameters().all()) {
      adam.m.push_back(rng.normal_matrix(p.tensor.rows(), p.tensor.cols()));
      adam.v.push_back(rng.normal_matrix(p.tensor.rows(), p.tensor.cols()).cwiseAbs());
    }
    adam.step = 42;
    ckpt.optimizer = adam;
    ckpt.cursor = TrainCursor{42, 3, 1};
    ckpt.rng_state = rng.state();
    const std::string path = (dir / "model.ckpt").string();
    save_checkpoint(ckpt, path);
    const std::string bytes = binary::read_file(path);
    const Checkpoint back = load_checkpoint(path);
    const Model restored = model_from_checkpoint(back);
    bool ok = encode_checkpoint(back) == bytes && encode_checkpoint(make_checkpoint(restored)) ==
                                                     encode_checkpoint(make_checkpoint(model_from_checkpoint(ckpt)));
    ok = ok && back.optimizer && back.optimizer->m.size() == adam.m.size() && back.optimizer->m[0] == adam.m[0];
    r.passed = ok;
    r.detail = ok ? "bitwise equal (" + std::to_string(bytes.size()) + " bytes)" : "mismatch";
  }));
  if (work_dir.empty()) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  return results;
}

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  std::vector<CheckResult> all;
  for (auto&& part : {gradient_checks(), kl_checks(options.sabotage_kl), metric_oracle_checks(),
                      format_checks(options.work_dir)}) {
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const CheckResult& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(10) << r.suite << std::setw(52) << r.name
       << std::right << std::fixed << std::setprecision(2) << std::setw(7) << r.seconds << "s  " << r.detail
       << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
  return !results.empty() && std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

}  // namespace cteg
