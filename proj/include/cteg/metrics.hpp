#pragma once

// Evaluation metrics over expression sequences.

#include "cteg/data_io.hpp"
#include "cteg/errors.hpp"
#include "cteg/model.hpp"
#include "cteg/runtime.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cteg {

/// Mean per-frame Euclidean distance over the first min(T_a, T_b) frames.
template <class Scalar>
Scalar seq_distance(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  if (a.rows() < 1 || b.rows() < 1) throw ContractError("seq_distance: sequences must be non-empty");
  if (a.cols() != b.cols()) throw DimensionError("seq_distance: frame widths differ");
  const Index n = std::min(a.rows(), b.rows());
  Scalar total(0);
  for (Index t = 0; t < n; ++t) total += (a.row(t) - b.row(t)).norm();
  return total / static_cast<Scalar>(n);
}

enum class VariationMode {
  spatial,   // variance of the components of each frame, averaged over frames
  temporal,  // variance of each component over time, averaged over components
};

template <class Scalar>
Scalar sequence_variation(const MatrixX<Scalar>& s, VariationMode mode = VariationMode::spatial) {
  if (s.rows() < 1 || s.cols() < 1) throw ContractError("variation: sequence must be non-empty");
  if (mode == VariationMode::spatial) {
    const auto centered = s.colwise() - s.rowwise().mean();
    return centered.array().square().rowwise().mean().mean();
  }
  const auto centered = s.rowwise() - s.colwise().mean();
  return centered.array().square().colwise().mean().mean();
}

template <class Scalar>
Scalar variation(const std::vector<MatrixX<Scalar>>& seqs, VariationMode mode = VariationMode::spatial) {
  if (seqs.empty()) throw ContractError("variation: no sequences");
  Scalar total(0);
  for (const auto& s : seqs) total += sequence_variation(s, mode);
  return total / static_cast<Scalar>(seqs.size());
}

/// Mean adjacent-frame distance of one sequence; requires T >= 2.
template <class Scalar>
Scalar sequence_fgd(const MatrixX<Scalar>& s) {
  if (s.rows() < 2) throw ContractError("fgd: sequence needs at least two frames");
  Scalar total(0);
  for (Index t = 0; t + 1 < s.rows(); ++t) total += (s.row(t + 1) - s.row(t)).norm();
  return total / static_cast<Scalar>(s.rows() - 1);
}

/// Sequences shorter than two frames are skipped with a warning.
template <class Scalar>
Scalar fgd(const std::vector<MatrixX<Scalar>>& seqs) {
  Scalar total(0);
  std::size_t used = 0;
  std::size_t skipped = 0;
  for (const auto& s : seqs) {
    if (s.rows() < 2) {
      ++skipped;
      continue;
    }
    total += sequence_fgd(s);
    ++used;
  }
  if (skipped > 0) warn("fgd: skipped " + std::to_string(skipped) + " sequence(s) shorter than two frames");
  if (used == 0) throw ContractError("fgd: no sequence has two or more frames");
  return total / static_cast<Scalar>(used);
}

/// Mean seq_distance over all unordered pairs.
template <class Scalar>
Scalar dot(const std::vector<MatrixX<Scalar>>& seqs) {
  const std::size_t n = seqs.size();
  if (n < 2) throw ContractError("dot: needs at least two sequences");
  Scalar total(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) total += seq_distance(seqs[i], seqs[j]);
  }
  return Scalar(2) * total / static_cast<Scalar>(n * (n - 1));
}

/// Draws one sequence; decoders use the rng for every random choice.
using SequenceSampler = std::function<ExpressionSequence(RngStream&)>;
using ConditionalSampler = std::function<ExpressionSequence(const Matrix& text, RngStream&)>;

enum class DiversityNorm {
  per_sequence,  // pair-distance sum divided by N_d
  per_pair,      // mean over the N_d / 2 pairs
};

/// Pair distances for consecutive draws (0,1), (2,3), ...
std::vector<double> diversity_pair_distances(const std::vector<ExpressionSequence>& draws);
double diversity_from_pairs(std::span<const double> pair_distances, DiversityNorm norm = DiversityNorm::per_sequence);

struct DiversityResult {
  double value = 0.0;
  std::vector<double> pair_distances;
};

/// Draws N_d sequences (draw i uses rng.split(i)); N_d must be even.
DiversityResult diversity(const SequenceSampler& sampler, int n_d, const RngStream& rng,
                          DiversityNorm norm = DiversityNorm::per_sequence);

struct MModalityResult {
  double value = 0.0;
  std::vector<double> pair_distances;
};

/// N_m text draws, each decoded twice with independent substreams.
MModalityResult mmodality(const ConditionalSampler& sampler, const std::vector<Matrix>& texts, int n_m,
                          const RngStream& rng);

/// Per-sequence uniform permutation of frames.
std::vector<ExpressionSequence> shuffle_frames(const std::vector<ExpressionSequence>& seqs, RngStream& rng);

// ---------------------------------------------------------------------------
// continuous perplexity

struct CpplOptions {
  double delta = 0.8;
  double sigma = 0.2;
};

/// Standard normal CDF.
double normal_cdf(double z);
/// log Q(z) = log(1 - Phi(z)), finite far into the upper tail.
double log_normal_sf(double z);
/// log(Phi(b) - Phi(a)) for a < b.
double log_normal_interval(double a, double b);

/// Natural log of the probability that a N(mu, sigma^2) draw lies in
/// [x - delta, x + delta].
double log_interval_probability(double x, double mu, const CpplOptions& options = {});

/// H = -(1/T) sum_t log2 p_t for one sequence given its predictive means.
double sequence_entropy(const Matrix& frames, const Matrix& means, const CpplOptions& options = {});

struct CpplResult {
  double value = 0.0;  // +inf when 2^log2_value overflows
  double log2_value = 0.0;
  std::vector<double> entropies;
};

CpplResult cppl_from_entropies(std::vector<double> entropies);
CpplResult cppl_from_means(const std::vector<Matrix>& frames, const std::vector<Matrix>& means,
                           const CpplOptions& options = {});
/// Teacher-forced predictive means with prior-mean latents on every record.
CpplResult cppl(const Model& model, const Dataset& data, const CpplOptions& options = {});

// ---------------------------------------------------------------------------
// bootstrap

/// Standard deviation of `metric` over `iterations` resamples with
/// replacement of `units`.
template <class Unit>
double bootstrap_se(const std::function<double(const std::vector<Unit>&)>& metric, const std::vector<Unit>& units,
                    int iterations, RngStream& rng) {
  if (units.empty()) throw ContractError("bootstrap_se: no samples");
  if (iterations < 2) throw ContractError("bootstrap_se: needs at least two iterations");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(iterations));
  std::vector<Unit> resample(units.size());
  for (int it = 0; it < iterations; ++it) {
    for (auto& u : resample) u = units[rng.below(units.size())];
    values.push_back(metric(resample));
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

// ---------------------------------------------------------------------------
// model samplers

/// Decoded sequence, or one zero frame when decoding stops immediately.
ExpressionSequence nonempty_decode(const Model& model, const Matrix& text, RngStream& rng,
                                   const DecodeOptions& options = {});
SequenceSampler null_text_sampler(const Model& model, const DecodeOptions& options = {});
ConditionalSampler text_sampler(const Model& model, const DecodeOptions& options = {});

// ---------------------------------------------------------------------------
// reports

struct MetricParams {
  std::optional<int> n_d;
  std::optional<int> n_m;
  std::optional<double> delta;
  std::optional<double> sigma;
  std::optional<int> iterations;
};

struct MetricEntry {
  std::string name;
  double value = 0.0;
  std::optional<double> std_error;
  std::size_t n = 0;
  MetricParams params;
};

struct MetricReport {
  std::vector<MetricEntry> entries;

  const MetricEntry* find(const std::string& name) const;
  /// One line per metric: name, value, stderr, params.
  std::string human() const;
  /// `metric.<name>.<field>=<value>` lines.
  std::string key_values() const;
};

}  // namespace cteg
