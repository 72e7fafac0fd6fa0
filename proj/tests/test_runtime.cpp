#include "cteg/errors.hpp"
#include "cteg/runtime.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

using namespace cteg;
using cteg::testing::random_matrix;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.msl = 8;
  c.epochs = 3;
  c.warmup = 10;
  c.batch_size = 2;
  c.seed = 4;
  return c;
}

Dataset toy_data(int n = 5) {
  Dataset d;
  for (int i = 0; i < n; ++i) {
    d.push_back({"r" + std::to_string(i), "t", 0.5 * random_matrix(10 + i, 2 + i % 3, 53),
                 random_matrix(40 + i, 2, 16)});
  }
  return d;
}

}  // namespace

TEST(Schedule, HandValuesAndShape) {
  EXPECT_NEAR(lr_at(4000, 768, 4000), 5.706e-4, 1e-7);
  EXPECT_NEAR(lr_at(1, 768, 4000), 1.426e-7, 1e-10);
  EXPECT_NEAR(lr_at(4000, 768, 4000), std::pow(768.0, -0.5) * std::pow(4000.0, -0.5), 1e-18);
  for (long s = 1; s < 4000; s += 97) EXPECT_LT(lr_at(s, 768, 4000), lr_at(s + 1, 768, 4000));
  for (long s = 4001; s < 20000; s += 997) EXPECT_GT(lr_at(s, 768, 4000), lr_at(s + 1, 768, 4000));
  EXPECT_THROW(lr_at(0, 768, 4000), ContractError);
}

TEST(Adam, FirstStepFromZeroState) {
  Matrix p = Matrix::Zero(1, 1), m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
  adam_update(p, Matrix::Ones(1, 1), m, v, 1, 0.1);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps).
  EXPECT_NEAR(p(0, 0), -0.1, 1e-9);
  EXPECT_NEAR(m(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(v(0, 0), 0.02, 1e-15);
}

TEST(Adam, ZeroGradientKeepsParametersAndDecaysMoments) {
  Matrix p = Matrix::Constant(1, 2, 3.0), m = Matrix::Constant(1, 2, 1.0), v = Matrix::Constant(1, 2, 1.0);
  adam_update(p, Matrix::Zero(1, 2), m, v, 5, 0.1);
  EXPECT_NE(p(0, 0), 3.0);  // momentum still moves it
  Matrix q = Matrix::Constant(1, 2, 3.0), m0 = Matrix::Zero(1, 2), v0 = Matrix::Zero(1, 2);
  adam_update(q, Matrix::Zero(1, 2), m0, v0, 1, 0.1);
  EXPECT_EQ(q, Matrix::Constant(1, 2, 3.0));
  EXPECT_NEAR(m(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(v(0, 0), 0.98, 1e-15);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Matrix p = Matrix::Zero(1, 1), m = Matrix::Zero(1, 1), v = Matrix::Zero(1, 1);
  double last = 0.0;
  for (long t = 1; t <= 500; ++t) {
    const double before = p(0, 0);
    adam_update(p, Matrix::Constant(1, 1, 0.3), m, v, t, 0.01);
    last = before - p(0, 0);
  }
  EXPECT_NEAR(last, 0.01, 1e-6);
}

TEST(Adam, StepOverStoreUsesGradScale) {
  ParameterStore store;
  Tensor w = store.add("w", Matrix::Constant(1, 1, 1.0));
  backward(sum(square(w)));
  EXPECT_DOUBLE_EQ(grad_norm(store.all()), 2.0);
  AdamState state;
  adam_step(store.all(), state, 0.1, 0.5);
  EXPECT_EQ(state.step, 1);
  ASSERT_EQ(state.m.size(), 1u);
  EXPECT_NEAR(state.m[0](0, 0), 0.1 * 1.0, 1e-15);
  EXPECT_NEAR(w.value()(0, 0), 0.9, 1e-8);
}

TEST(Checkpoint, RoundTripIsBitwiseAndRestoresModel) {
  Model m(tiny());
  ExpressionFrame avg = random_matrix(1, 1, 53);
  m.set_average_expression(avg);
  Checkpoint ck = make_checkpoint(m);
  const std::string bytes = encode_checkpoint(ck);
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
  const Model back = model_from_checkpoint(decode_checkpoint(bytes));
  EXPECT_EQ(back.average_expression(), avg);
  const Matrix f = random_matrix(2, 3, 53), t = random_matrix(3, 2, 16);
  EXPECT_EQ(back.predictive_means(f, t), m.predictive_means(f, t));

  const std::string path = (std::filesystem::temp_directory_path() / "cteg_rt.ckpt").string();
  save_checkpoint(ck, path);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, Float32OnlyReloadIsClose) {
  Model m(tiny());
  const Model back = model_from_checkpoint(decode_checkpoint(encode_checkpoint(make_checkpoint(m, false))));
  const Matrix f = random_matrix(2, 3, 53), t = random_matrix(3, 2, 16);
  EXPECT_LT((back.predictive_means(f, t) - m.predictive_means(f, t)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const std::string bytes = encode_checkpoint(make_checkpoint(Model(tiny())));
  std::string magic = bytes;
  magic[1] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  std::string version = bytes;
  version[4] = 7;
  EXPECT_THROW(decode_checkpoint(version), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), FormatError) << cut;
  }
  EXPECT_THROW(decode_checkpoint(bytes + "ZZZZ" + std::string(4, '\0')), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}

TEST(Checkpoint, LayoutMismatchIsRejected) {
  Checkpoint ck = make_checkpoint(Model(tiny()));
  Checkpoint missing = ck;
  missing.tensors.pop_back();
  missing.master.reset();
  EXPECT_THROW(model_from_checkpoint(missing), FormatError);
  Checkpoint reshaped = ck;
  reshaped.tensors[0].second = MatrixX<float>::Zero(1, 1);
  reshaped.master.reset();
  EXPECT_THROW(model_from_checkpoint(reshaped), FormatError);
  Checkpoint extra = ck;
  extra.tensors.emplace_back("bogus", MatrixX<float>::Zero(1, 1));
  extra.master.reset();
  EXPECT_THROW(model_from_checkpoint(extra), FormatError);
}

TEST(Batches, CoverEveryIndexOnceAndGroupByLength) {
  const Dataset d = toy_data(9);
  const auto batches = epoch_batches(d, 2, 1, 0);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 2u);
    for (std::size_t i : b) seen.insert(i);
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 9u);
  EXPECT_EQ(batches, epoch_batches(d, 2, 1, 0));
  EXPECT_NE(batches, epoch_batches(d, 2, 1, 1));
}

TEST(Train, DeterministicAndDecreasing) {
  const Dataset d = toy_data();
  ModelConfig c = tiny();
  c.epochs = 20;
  const TrainResult a = train(c, d);
  const TrainResult b = train(c, d);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].total, b.log[i].total);
  EXPECT_EQ(encode_checkpoint(a.final_checkpoint), encode_checkpoint(b.final_checkpoint));
  EXPECT_LT(a.epoch_total.back(), a.epoch_total.front());
  EXPECT_EQ(a.epoch_total.size(), 20u);
}

TEST(Train, WithoutGuideLossLogsZero) {
  ModelConfig c = tiny();
  c.use_lg = false;
  const TrainResult r = train(c, toy_data());
  for (const TrainLogEntry& e : r.log) EXPECT_EQ(e.guide, 0.0);
}

TEST(Train, ResumeMatchesContinuousRun) {
  const Dataset d = toy_data();
  ModelConfig c = tiny();
  const TrainResult full = train(c, d);
  TrainOptions first;
  first.max_steps = 4;
  const TrainResult part = train(c, d, first);
  const Checkpoint ck = decode_checkpoint(encode_checkpoint(part.final_checkpoint));
  TrainOptions rest;
  rest.resume = &ck;
  const TrainResult resumed = train(c, d, rest);
  ASSERT_EQ(resumed.log.size() + 4, full.log.size());
  for (std::size_t i = 0; i < resumed.log.size(); ++i) {
    EXPECT_EQ(resumed.log[i].step, full.log[i + 4].step);
    EXPECT_NEAR(resumed.log[i].total, full.log[i + 4].total, 1e-6);
  }
}

TEST(Train, EmptyDatasetRejected) { EXPECT_THROW(train(tiny(), Dataset{}), ContractError); }

TEST(Decode, ZeroModelStopsImmediately) {
  Model m(tiny(), true);
  RngStream rng(1);
  const DecodeResult r = decode(m, m.null_text(), rng);
  EXPECT_LE(r.frames.rows(), 1);
  EXPECT_EQ(r.reason, StopReason::threshold);
}

TEST(Decode, NeverExceedsMslAndStaysFinite) {
  ModelConfig c = tiny();
  c.stop_threshold = 0.0;
  Model m(c);
  RngStream rng(2);
  const DecodeResult r = decode(m, random_matrix(1, 2, 16), rng);
  EXPECT_EQ(r.frames.rows(), c.msl);
  EXPECT_EQ(r.reason, StopReason::msl);
  EXPECT_TRUE(r.frames.allFinite());
  DecodeOptions o;
  o.msl = 1;
  RngStream rng2(2);
  EXPECT_LE(decode(m, random_matrix(1, 2, 16), rng2, o).frames.rows(), 1);
}

TEST(Decode, DifferentSeedsGiveDifferentSequences) {
  ModelConfig c = tiny();
  c.stop_threshold = 0.0;
  const TrainResult t = train(c, toy_data());
  const Model m = model_from_checkpoint(t.final_checkpoint);
  RngStream a(1), b(2), a2(1);
  const Matrix text = random_matrix(41, 2, 16);
  const Matrix x = decode(m, text, a).frames, y = decode(m, text, b).frames;
  EXPECT_GT((x - y).norm(), 0.0);
  EXPECT_EQ(x, decode(m, text, a2).frames);
}

TEST(Decode, EmptyTextRejected) {
  Model m(tiny());
  ToyTextEncoder enc(16);
  RngStream rng(1);
  EXPECT_THROW(decode("", m, enc, rng), ContractError);
  EXPECT_NO_THROW(decode("happy", m, enc, rng));
}
