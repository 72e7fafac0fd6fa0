#include "cteg/metrics.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace cteg;
using cteg::testing::random_matrix;

namespace {

Matrix frame_e1(double scale) {
  Matrix m = Matrix::Zero(1, 53);
  m(0, 0) = scale;
  return m;
}

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.msl = 6;
  c.seed = 2;
  return c;
}

}  // namespace

TEST(SeqDistance, HandCases) {
  const Matrix a = random_matrix(1, 4, 53), b = random_matrix(2, 6, 53);
  EXPECT_EQ(seq_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(seq_distance(Matrix(Matrix::Zero(1, 53)), frame_e1(3.0)), 3.0);
  EXPECT_EQ(seq_distance(a, b), seq_distance(b, a));
  double manual = 0.0;
  for (Index t = 0; t < 4; ++t) manual += (a.row(t) - b.row(t)).norm();
  EXPECT_NEAR(seq_distance(a, b), manual / 4.0, 1e-14);
  EXPECT_THROW(seq_distance(a, Matrix(Matrix::Zero(0, 53))), ContractError);
}

TEST(Diversity, ConstantSamplerIsZero) {
  const Matrix c = random_matrix(3, 4, 53);
  const SequenceSampler s = [&](RngStream&) { return c; };
  EXPECT_EQ(diversity(s, 10, RngStream(1)).value, 0.0);
}

TEST(Diversity, AlternatingSequencesDivideBySampleCount) {
  int calls = 0;
  const SequenceSampler s = [&](RngStream&) { return (calls++ % 2 == 0) ? Matrix(Matrix::Zero(1, 53)) : frame_e1(3.0); };
  const DiversityResult r = diversity(s, 4, RngStream(1));
  EXPECT_DOUBLE_EQ(r.value, 1.5);
  EXPECT_EQ(r.pair_distances, (std::vector<double>{3.0, 3.0}));
  EXPECT_DOUBLE_EQ(diversity_from_pairs(r.pair_distances, DiversityNorm::per_pair), 3.0);
}

TEST(Diversity, OddOrZeroCountRejectedAndDeterministic) {
  const SequenceSampler s = [](RngStream& rng) { return rng.normal_matrix(3, 53); };
  EXPECT_THROW(diversity(s, 3, RngStream(1)), ContractError);
  EXPECT_THROW(diversity(s, 0, RngStream(1)), ContractError);
  EXPECT_EQ(diversity(s, 8, RngStream(5)).value, diversity(s, 8, RngStream(5)).value);
  EXPECT_GT(diversity(s, 8, RngStream(5)).value, 0.0);
}

TEST(MModality, DeterministicIsZeroStochasticIsPositive) {
  const std::vector<Matrix> texts = {random_matrix(1, 2, 16), random_matrix(2, 3, 16)};
  const ConditionalSampler fixed = [](const Matrix& text, RngStream&) {
    Matrix m = Matrix::Zero(2, 53);
    m(0, 0) = text.sum();
    return m;
  };
  EXPECT_EQ(mmodality(fixed, texts, 5, RngStream(1)).value, 0.0);
  const ConditionalSampler noisy = [](const Matrix&, RngStream& rng) { return rng.normal_matrix(2, 53); };
  const double v = mmodality(noisy, texts, 5, RngStream(1)).value;
  EXPECT_GT(v, 0.0);
  EXPECT_EQ(v, mmodality(noisy, texts, 5, RngStream(1)).value);
  EXPECT_THROW(mmodality(noisy, {}, 5, RngStream(1)), ContractError);
}

TEST(MModality, ZeroInitModelIsDeterministic) {
  Model m(tiny(), true);
  const ConditionalSampler s = text_sampler(m, {});
  EXPECT_EQ(mmodality(s, {random_matrix(1, 2, 16)}, 3, RngStream(4)).value, 0.0);
}

TEST(Variation, HandCasesAndScaling) {
  EXPECT_NEAR(sequence_variation(Matrix(Matrix::Constant(3, 53, 1.7))), 0.0, 1e-28);
  Matrix f = Matrix::Zero(1, 53);
  f(0, 0) = 1.0;
  f(0, 1) = -1.0;
  EXPECT_NEAR(sequence_variation(f), 2.0 / 53.0, 1e-15);
  EXPECT_NEAR(2.0 / 53.0, 0.03774, 1e-5);
  const Matrix s = random_matrix(3, 5, 53);
  EXPECT_NEAR(sequence_variation(Matrix(2.0 * s)), 4.0 * sequence_variation(s), 1e-12);
  // Temporal mode: variance over time.
  Matrix t = Matrix::Zero(2, 53);
  t.row(1).setConstant(2.0);
  EXPECT_EQ(sequence_variation(t), 0.0);
  EXPECT_DOUBLE_EQ(sequence_variation(t, VariationMode::temporal), 1.0);
}

TEST(Fgd, HandCasesAndReversal) {
  EXPECT_EQ(sequence_fgd(Matrix(Matrix::Constant(4, 53, 0.3))), 0.0);
  Matrix s = Matrix::Zero(2, 53);
  s(1, 0) = 1.0;
  EXPECT_DOUBLE_EQ(fgd(std::vector<Matrix>{s}), 1.0);
  const Matrix r = random_matrix(4, 6, 53);
  EXPECT_NEAR(sequence_fgd(r), sequence_fgd(Matrix(r.colwise().reverse())), 1e-14);
}

TEST(Fgd, ShortSequencesSkippedOrRejected) {
  Matrix s = Matrix::Zero(2, 53);
  s(1, 0) = 1.0;
  ::testing::internal::CaptureStderr();
  EXPECT_DOUBLE_EQ(fgd(std::vector<Matrix>{s, Matrix(Matrix::Zero(1, 53))}), 1.0);
  EXPECT_NE(::testing::internal::GetCapturedStderr().find("skipped 1"), std::string::npos);
  ::testing::internal::CaptureStderr();
  EXPECT_THROW(fgd(std::vector<Matrix>{Matrix(Matrix::Zero(1, 53))}), ContractError);
  ::testing::internal::GetCapturedStderr();
}

TEST(Dot, HandCasesAndPermutation) {
  const Matrix c = random_matrix(1, 3, 53);
  EXPECT_EQ(dot(std::vector<Matrix>{c, c, c}), 0.0);
  EXPECT_DOUBLE_EQ(dot(std::vector<Matrix>{Matrix(Matrix::Zero(1, 53)), frame_e1(3.0)}), 3.0);
  std::vector<Matrix> set = {random_matrix(2, 3, 53), random_matrix(3, 4, 53), random_matrix(4, 2, 53)};
  const double v = dot(set);
  std::swap(set[0], set[2]);
  EXPECT_NEAR(dot(set), v, 1e-14);
  EXPECT_THROW(dot(std::vector<Matrix>{c}), ContractError);
}

TEST(Cppl, AnchorValue) {
  const Matrix x = Matrix::Constant(1, 1, 0.3);
  const CpplResult r = cppl_from_means({x}, {x});
  // Oracle: two-sided tail mass of N(0,1) beyond 4 from erfc.
  const double p = 1.0 - std::erfc(4.0 / std::sqrt(2.0));
  EXPECT_NEAR(p, 0.9999367, 1e-7);
  EXPECT_NEAR(r.value, 1.0 / p, 1e-12);
  EXPECT_NEAR(r.value, 1.0000633, 1e-7);
}

TEST(Cppl, FarMeanIsHugeButFinite) {
  const Matrix x = Matrix::Constant(1, 53, 0.0), mu = Matrix::Constant(1, 53, 50.0);
  const CpplResult r = cppl_from_means({x}, {mu});
  EXPECT_TRUE(std::isfinite(r.log2_value));
  EXPECT_GT(r.log2_value, 1e4);
  // Upper-tail asymptote: log Q(z) ~ -z^2/2 - log(z sqrt(2 pi)).
  const double z = (50.0 - 0.8) / 0.2;
  const double per_dim = -(-0.5 * z * z - std::log(z * std::sqrt(2.0 * M_PI))) / std::log(2.0);
  EXPECT_NEAR(r.log2_value / 53.0, per_dim, 1e-3 * per_dim);
}

TEST(Cppl, AtLeastOneAndMatchesDirectProduct) {
  const Matrix f = random_matrix(1, 3, 4), mu = f + 0.3 * random_matrix(2, 3, 4);
  const CpplResult r = cppl_from_means({f}, {mu});
  EXPECT_GE(r.value, 1.0);
  double log2p = 0.0;
  for (Index t = 0; t < 3; ++t)
    for (Index k = 0; k < 4; ++k) {
      const double a = (f(t, k) - 0.8 - mu(t, k)) / 0.2, b = (f(t, k) + 0.8 - mu(t, k)) / 0.2;
      log2p += std::log2(0.5 * std::erfc(-b / std::sqrt(2.0)) - 0.5 * std::erfc(-a / std::sqrt(2.0)));
    }
  EXPECT_NEAR(r.log2_value, -log2p / 3.0, 1e-10);
}

TEST(Cppl, IntervalHelpersAreSymmetric) {
  EXPECT_NEAR(log_normal_interval(-1.0, 2.0), log_normal_interval(-2.0, 1.0), 1e-15);
  EXPECT_NEAR(std::exp(log_normal_interval(1.0, 2.0)), normal_cdf(2.0) - normal_cdf(1.0), 1e-15);
  EXPECT_NEAR(log_normal_sf(29.999), log_normal_sf(30.001), 0.1);
  EXPECT_THROW(log_normal_interval(1.0, 1.0), ContractError);
  EXPECT_THROW(sequence_entropy(Matrix::Zero(2, 53), Matrix::Zero(3, 53)), DimensionError);
}

TEST(Cppl, ModelPathUsesPredictiveMeans) {
  Model m(tiny());
  TrainingExample e{"a", "x", random_matrix(1, 4, 53), random_matrix(2, 2, 16)};
  const CpplResult r = cppl(m, {e});
  const double h = sequence_entropy(e.frames, m.predictive_means(e.frames, e.text_embedding));
  EXPECT_DOUBLE_EQ(r.log2_value, h);
}

TEST(Shuffle, PermutesFramesReproducibly) {
  const std::vector<Matrix> seqs = {random_matrix(1, 6, 53), random_matrix(2, 1, 53)};
  RngStream a(3), b(3);
  const auto s1 = shuffle_frames(seqs, a);
  const auto s2 = shuffle_frames(seqs, b);
  EXPECT_EQ(s1[0], s2[0]);
  EXPECT_EQ(s1[1], seqs[1]);
  auto sorted_rows = [](const Matrix& m) {
    std::vector<std::vector<double>> rows;
    for (Index i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).begin(), m.row(i).end());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  EXPECT_EQ(sorted_rows(s1[0]), sorted_rows(seqs[0]));
}

TEST(Bootstrap, ConstantIsZeroAndMeanOfBernoulliMatchesAnalyticSe) {
  const std::function<double(const std::vector<double>&)> mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  RngStream rng(1);
  EXPECT_EQ(bootstrap_se(mean, std::vector<double>(50, 2.0), 100, rng), 0.0);
  const int n = 2000;
  std::vector<double> units(n);
  for (int i = 0; i < n; ++i) units[i] = i % 2;
  RngStream a(7), b(7);
  const double se = bootstrap_se(mean, units, 500, a);
  EXPECT_NEAR(se, 0.5 / std::sqrt(static_cast<double>(n)), 0.2 * 0.5 / std::sqrt(static_cast<double>(n)));
  EXPECT_EQ(se, bootstrap_se(mean, units, 500, b));
  EXPECT_THROW(bootstrap_se(mean, std::vector<double>{}, 10, a), ContractError);
}

TEST(Samplers, EmptyDecodeBecomesOneZeroFrame) {
  Model m(tiny(), true);
  RngStream rng(1);
  const Matrix s = nonempty_decode(m, m.null_text(), rng, {});
  EXPECT_EQ(s, Matrix::Zero(1, 53));
  const SequenceSampler ns = null_text_sampler(m, {});
  EXPECT_EQ(diversity(ns, 4, RngStream(2)).value, 0.0);
}

TEST(Report, KeyValueLines) {
  MetricReport report;
  MetricEntry e;
  e.name = "fgd";
  e.value = 0.25;
  e.std_error = 0.01;
  e.n = 10;
  e.params.iterations = 100;
  report.entries.push_back(e);
  const std::string kv = report.key_values();
  EXPECT_NE(kv.find("metric.fgd.value=0.25\n"), std::string::npos);
  EXPECT_NE(kv.find("metric.fgd.stderr=0.01\n"), std::string::npos);
  EXPECT_NE(kv.find("metric.fgd.iterations=100\n"), std::string::npos);
  ASSERT_NE(report.find("fgd"), nullptr);
  EXPECT_EQ(report.find("nope"), nullptr);
  EXPECT_NE(report.human().find("fgd"), std::string::npos);
}
