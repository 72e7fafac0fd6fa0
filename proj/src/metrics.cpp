#include "cteg/metrics.hpp"

#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace cteg {

std::vector<double> diversity_pair_distances(const std::vector<ExpressionSequence>& draws) {
  if (draws.size() % 2 != 0) throw ContractError("diversity: number of draws must be even");
  std::vector<double> out;
  out.reserve(draws.size() / 2);
  for (std::size_t i = 0; i + 1 < draws.size(); i += 2) out.push_back(seq_distance(draws[i], draws[i + 1]));
  return out;
}

double diversity_from_pairs(std::span<const double> pair_distances, DiversityNorm norm) {
  if (pair_distances.empty()) throw ContractError("diversity: no pairs");
  double total = 0.0;
  for (double d : pair_distances) total += d;
  const double n = static_cast<double>(pair_distances.size());
  return norm == DiversityNorm::per_pair ? total / n : total / (2.0 * n);
}

DiversityResult diversity(const SequenceSampler& sampler, int n_d, const RngStream& rng, DiversityNorm norm) {
  if (n_d < 2 || n_d % 2 != 0) throw ContractError("diversity: N_d must be a positive even number, got " + std::to_string(n_d));
  std::vector<ExpressionSequence> draws;
  draws.reserve(static_cast<std::size_t>(n_d));
  for (int i = 0; i < n_d; ++i) {
    RngStream sub = rng.split(static_cast<std::uint64_t>(i));
    draws.push_back(sampler(sub));
  }
  DiversityResult r;
  r.pair_distances = diversity_pair_distances(draws);
  r.value = diversity_from_pairs(r.pair_distances, norm);
  return r;
}

MModalityResult mmodality(const ConditionalSampler& sampler, const std::vector<Matrix>& texts, int n_m,
                          const RngStream& rng) {
  if (texts.empty()) throw ContractError("mmodality: no texts");
  if (n_m < 1) throw ContractError("mmodality: N_m must be positive");
  RngStream pick = rng.split(0x7E57ULL);
  MModalityResult r;
  for (int i = 0; i < n_m; ++i) {
    const Matrix& text = texts[pick.below(texts.size())];
    RngStream a = rng.split(2 * static_cast<std::uint64_t>(i) + 1);
    RngStream b = rng.split(2 * static_cast<std::uint64_t>(i) + 2);
    r.pair_distances.push_back(seq_distance(sampler(text, a), sampler(text, b)));
  }
  double total = 0.0;
  for (double d : r.pair_distances) total += d;
  r.value = total / static_cast<double>(n_m);
  return r;
}

std::vector<ExpressionSequence> shuffle_frames(const std::vector<ExpressionSequence>& seqs, RngStream& rng) {
  std::vector<ExpressionSequence> out;
  out.reserve(seqs.size());
  for (const ExpressionSequence& s : seqs) {
    std::vector<Index> order(static_cast<std::size_t>(s.rows()));
    for (Index i = 0; i < s.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    ExpressionSequence shuffled(s.rows(), s.cols());
    for (Index i = 0; i < s.rows(); ++i) shuffled.row(i) = s.row(order[static_cast<std::size_t>(i)]);
    out.push_back(std::move(shuffled));
  }
  return out;
}

// ---------------------------------------------------------------------------

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double log_normal_sf(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double z2 = 1.0 / (z * z);
  const double series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
  return -0.5 * z * z - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double log_normal_interval(double a, double b) {
  if (!(a < b)) throw ContractError("log_normal_interval: requires a < b");
  if (b <= 0.0) return log_normal_interval(-b, -a);
  if (a >= 0.0) {
    const double la = log_normal_sf(a);
    const double lb = log_normal_sf(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  return std::log1p(-(std::exp(log_normal_sf(-a)) + std::exp(log_normal_sf(b))));
}

double log_interval_probability(double x, double mu, const CpplOptions& o) {
  if (!(o.delta > 0.0) || !(o.sigma > 0.0)) throw ContractError("cppl: delta and sigma must be positive");
  return log_normal_interval((x - o.delta - mu) / o.sigma, (x + o.delta - mu) / o.sigma);
}

double sequence_entropy(const Matrix& frames, const Matrix& means, const CpplOptions& options) {
  if (frames.rows() < 1) throw ContractError("cppl: sequence is empty");
  if (frames.rows() != means.rows() || frames.cols() != means.cols()) {
    throw DimensionError("cppl: frames and predictive means differ in shape");
  }
  double log_p = 0.0;
  for (Index t = 0; t < frames.rows(); ++t) {
    for (Index k = 0; k < frames.cols(); ++k) log_p += log_interval_probability(frames(t, k), means(t, k), options);
  }
  return -log_p / std::numbers::ln2 / static_cast<double>(frames.rows());
}

CpplResult cppl_from_entropies(std::vector<double> entropies) {
  if (entropies.empty()) throw ContractError("cppl: no sequences");
  CpplResult r;
  double total = 0.0;
  for (double h : entropies) total += h;
  r.log2_value = total / static_cast<double>(entropies.size());
  r.value = std::exp2(r.log2_value);
  r.entropies = std::move(entropies);
  return r;
}

CpplResult cppl_from_means(const std::vector<Matrix>& frames, const std::vector<Matrix>& means,
                           const CpplOptions& options) {
  if (frames.size() != means.size()) throw ContractError("cppl: frames and means counts differ");
  std::vector<double> h;
  h.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) h.push_back(sequence_entropy(frames[i], means[i], options));
  return cppl_from_entropies(std::move(h));
}

CpplResult cppl(const Model& model, const Dataset& data, const CpplOptions& options) {
  std::vector<double> h;
  h.reserve(data.size());
  for (const TrainingExample& e : data) {
    h.push_back(sequence_entropy(e.frames, model.predictive_means(e.frames, e.text_embedding), options));
  }
  return cppl_from_entropies(std::move(h));
}

// ---------------------------------------------------------------------------

ExpressionSequence nonempty_decode(const Model& model, const Matrix& text, RngStream& rng,
                                   const DecodeOptions& options) {
  DecodeResult r = decode(model, text, rng, options);
  if (r.frames.rows() == 0) return ExpressionSequence::Zero(1, kExpressionDim);
  return std::move(r.frames);
}

SequenceSampler null_text_sampler(const Model& model, const DecodeOptions& options) {
  return [&model, options](RngStream& rng) { return nonempty_decode(model, model.null_text(), rng, options); };
}

ConditionalSampler text_sampler(const Model& model, const DecodeOptions& options) {
  return [&model, options](const Matrix& text, RngStream& rng) { return nonempty_decode(model, text, rng, options); };
}

// ---------------------------------------------------------------------------

const MetricEntry* MetricReport::find(const std::string& name) const {
  for (const MetricEntry& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::vector<std::pair<std::string, std::string>> param_fields(const MetricParams& p) {
  std::vector<std::pair<std::string, std::string>> out;
  if (p.n_d) out.emplace_back("N_d", std::to_string(*p.n_d));
  if (p.n_m) out.emplace_back("N_m", std::to_string(*p.n_m));
  if (p.delta) out.emplace_back("delta", fmt(*p.delta));
  if (p.sigma) out.emplace_back("sigma", fmt(*p.sigma));
  if (p.iterations) out.emplace_back("iterations", std::to_string(*p.iterations));
  return out;
}

}  // namespace

std::string MetricReport::human() const {
  std::ostringstream os;
  for (const MetricEntry& e : entries) {
    os << std::left << std::setw(16) << e.name << ' ' << std::setw(16) << fmt(e.value);
    os << " stderr=" << (e.std_error ? fmt(*e.std_error) : std::string("-"));
    os << " n=" << e.n;
    for (const auto& [k, v] : param_fields(e.params)) os << ' ' << k << '=' << v;
    os << '\n';
  }
  return os.str();
}

std::string MetricReport::key_values() const {
  std::ostringstream os;
  for (const MetricEntry& e : entries) {
    const std::string p = "metric." + e.name + ".";
    os << p << "value=" << fmt(e.value) << '\n';
    if (e.std_error) os << p << "stderr=" << fmt(*e.std_error) << '\n';
    os << p << "n=" << e.n << '\n';
    for (const auto& [k, v] : param_fields(e.params)) os << p << k << '=' << v << '\n';
  }
  return os.str();
}

}  // namespace cteg
