#include "cteg/binary_io.hpp"
#include "cteg/data_io.hpp"
#include "cteg/errors.hpp"
#include "cteg/metrics.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace cteg;
using cteg::testing::random_matrix;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("cteg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

Matrix as_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

}  // namespace

TEST(SequenceFile, RoundTripIsBitwise) {
  TempDir dir;
  const Matrix frames = as_f32(random_matrix(1, 10, 53));
  write_sequence(frames, dir / "a.exp");
  const Matrix back = read_sequence(dir / "a.exp");
  EXPECT_EQ(back, frames);
  write_sequence(back, dir / "b.exp");
  EXPECT_EQ(binary::read_file(dir / "a.exp"), binary::read_file(dir / "b.exp"));
  EXPECT_EQ(binary::read_file(dir / "a.exp").size(), 13u + 10u * 53u * 4u);
}

TEST(SequenceFile, MalformedInputRejectedWithOffsets) {
  const std::string good = encode_matrix_file(random_matrix(2, 3, 53));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  try {
    decode_matrix_file(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::string bad_version = good;
  bad_version[4] = 9;
  try {
    decode_matrix_file(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(decode_matrix_file(good.substr(0, good.size() - 1)), FormatError);
  EXPECT_THROW(decode_matrix_file(good + "x"), FormatError);
  EXPECT_THROW(decode_matrix_file(good.substr(0, 7)), FormatError);
}

TEST(SequenceFile, WriteRequires53Dims) {
  TempDir dir;
  EXPECT_THROW(write_sequence(Matrix::Zero(2, 52), dir / "x.exp"), ContractError);
  EXPECT_THROW(write_sequence(Matrix::Zero(0, 53), dir / "x.exp"), ContractError);
  binary::write_file(dir / "wide.exp", encode_matrix_file(Matrix::Zero(2, 4)));
  EXPECT_THROW(read_sequence(dir / "wide.exp"), FormatError);
  EXPECT_THROW(read_sequence(dir / "missing.exp"), IoError);
}

TEST(CsvSequence, ParsesAndRejects) {
  std::string row;
  for (int k = 0; k < 53; ++k) row += (k ? "," : "") + std::to_string(k * 0.5);
  const Matrix m = parse_csv_sequence("# header\n\n" + row + "\n" + row + "\n");
  ASSERT_EQ(m.rows(), 2);
  EXPECT_EQ(m(1, 4), 2.0);
  try {
    parse_csv_sequence(row + "\n1,2,3\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_csv_sequence(row.substr(0, row.size() - 3) + "abc\n"), FormatError);
  EXPECT_THROW(parse_csv_sequence("# nothing\n"), FormatError);
}

TEST(Manifest, ParsesRecordsInOrder) {
  TempDir dir;
  for (const char* id : {"a", "b", "c"}) write_sequence(random_matrix(3, 2, 53), dir / (std::string(id) + ".exp"));
  write_text(dir / "m.tsv", "a\ttrain\thappy face\ta.exp\nb\tvalid\tsad\tb.exp\nc\ttest\tangry\tc.exp\n");
  const DatasetManifest m = load_manifest(dir / "m.tsv");
  ASSERT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.records[0].id, "a");
  EXPECT_EQ(m.records[0].text, "happy face");
  EXPECT_EQ(m.records[1].split, Split::valid);
  EXPECT_EQ(m.records[2].id, "c");
  EXPECT_EQ(m.split(Split::test).size(), 1u);
  EXPECT_EQ(fs::path(m.resolve(m.records[0])), fs::path(dir / "a.exp"));

  write_manifest(m, dir / "m2.tsv");
  const DatasetManifest again = load_manifest(dir / "m2.tsv");
  ASSERT_EQ(again.records.size(), 3u);
  EXPECT_EQ(again.records[1].text, "sad");
}

TEST(Manifest, ErrorsNameTheProblem) {
  TempDir dir;
  write_sequence(random_matrix(3, 2, 53), dir / "a.exp");
  write_text(dir / "dup.tsv", "a\ttrain\tx\ta.exp\na\ttrain\ty\ta.exp\n");
  try {
    load_manifest(dir / "dup.tsv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
  }
  write_text(dir / "bad.tsv", "a\ttrain\tx\ta.exp\nonly\ttwo\n");
  try {
    load_manifest(dir / "bad.tsv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  write_text(dir / "split.tsv", "a\tdev\tx\ta.exp\n");
  EXPECT_THROW(load_manifest(dir / "split.tsv"), FormatError);
  write_text(dir / "missing.tsv", "zz\ttrain\tx\tnope.exp\n");
  try {
    load_manifest(dir / "missing.tsv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("'zz'"), std::string::npos);
  }
  EXPECT_NO_THROW(load_manifest(dir / "missing.tsv", false));
}

TEST(Manifest, EmptyFileWarns) {
  TempDir dir;
  write_text(dir / "empty.tsv", "");
  ::testing::internal::CaptureStderr();
  const DatasetManifest m = load_manifest(dir / "empty.tsv");
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_TRUE(m.records.empty());
  EXPECT_NE(err.find("warning"), std::string::npos);
}

TEST(ToyEncoder, DeterministicUnitRowsAndOrder) {
  const ToyTextEncoder enc(32, 4);
  const Matrix ab = enc.encode("a b");
  const Matrix ba = enc.encode("B   A");
  EXPECT_EQ(ab, enc.encode("a b"));
  ASSERT_EQ(ab.rows(), 2);
  EXPECT_EQ(ab.row(0), ba.row(1));
  EXPECT_EQ(ab.row(1), ba.row(0));
  for (Index i = 0; i < ab.rows(); ++i) EXPECT_NEAR(ab.row(i).norm(), 1.0, 1e-12);
  EXPECT_EQ(enc.encode(""), Matrix::Zero(1, 32));
  EXPECT_NE(ToyTextEncoder(32, 5).encode("a"), enc.encode("a"));
  EXPECT_TRUE(enc.frozen());
  EXPECT_EQ(ToyTextEncoder(8, 0, 3).encode("one two three four five").rows(), 3);
}

TEST(ToyEncoder, HashIsFnv1a) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(tokenize("  Hello  World "), (std::vector<std::string>{"hello", "world"}));
}

TEST(Embeddings, RoundTripTruncationAndMissingId) {
  TempDir dir;
  const Matrix e = as_f32(random_matrix(1, 3, 16));
  write_embedding(e, dir / "r1.emb");
  write_embedding(as_f32(random_matrix(2, 6, 16)), dir / "r2.emb");
  ::testing::internal::CaptureStderr();
  const PrecomputedEmbeddings table = PrecomputedEmbeddings::load(dir.str(), 16, 4);
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("truncated"), std::string::npos);
  EXPECT_EQ(table.size(), 2u);
  EXPECT_EQ(table.get("r1"), e);
  EXPECT_EQ(table.get("r2").rows(), 4);
  try {
    table.get("r3");
    FAIL();
  } catch (const ContractError& ex) {
    EXPECT_NE(std::string(ex.what()).find("r3"), std::string::npos);
  }
  EXPECT_THROW(PrecomputedEmbeddings::load(dir.str(), 8), ContractError);
}

TEST(AverageExpression, HandExamplesAndOrderInvariance) {
  const Matrix one = random_matrix(1, 1, 53);
  EXPECT_EQ(average_expression(std::vector<Matrix>{one}), ExpressionFrame(one.row(0)));
  Matrix a = Matrix::Zero(1, 53), b = Matrix::Zero(1, 53);
  b(0, 0) = 2.0;
  ExpressionFrame want = ExpressionFrame::Zero(53);
  want(0) = 1.0;
  EXPECT_EQ(average_expression(std::vector<Matrix>{a, b}), want);
  const Matrix c = random_matrix(2, 4, 53), d = random_matrix(3, 2, 53);
  EXPECT_LT((average_expression(std::vector<Matrix>{c, d}) - average_expression(std::vector<Matrix>{d, c}))
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
  EXPECT_THROW(average_expression(std::vector<Matrix>{}), ContractError);
}

TEST(LoadExamples, EncodesEachRecord) {
  TempDir dir;
  SynthConfig cfg;
  cfg.n_pairs = 6;
  cfg.valid_fraction = 0.0;
  cfg.test_fraction = 0.0;
  const SynthSummary s = synth_dataset(cfg, dir.str());
  const DatasetManifest m = load_manifest(dir / "manifest.tsv");
  const Dataset data = load_examples(m, Split::train, ToyTextEncoder(16));
  ASSERT_EQ(data.size(), 6u);
  EXPECT_EQ(data[0].text_embedding.cols(), 16);
  EXPECT_EQ(data[0].frames.cols(), 53);
  EXPECT_THROW(load_examples(m, Split::train, PrecomputedEmbeddings::load(dir.str(), 16)), ContractError);
}

TEST(Synth, DeterministicAndTerminating) {
  TempDir a, b;
  SynthConfig cfg;
  cfg.n_pairs = 10;
  cfg.seed = 3;
  const SynthSummary sa = synth_dataset(cfg, a.str());
  synth_dataset(cfg, b.str());
  EXPECT_EQ(sa.manifest.records.size(), 10u);
  EXPECT_EQ(binary::read_file(a / "manifest.tsv"), binary::read_file(b / "manifest.tsv"));
  for (const ManifestRecord& r : sa.manifest.records) {
    const std::string pa = sa.manifest.resolve(r);
    const std::string pb = (fs::path(b.str()) / r.expr_path).string();
    EXPECT_EQ(binary::read_file(pa), binary::read_file(pb));
    const Matrix seq = read_sequence(pa);
    EXPECT_TRUE(seq.allFinite());
    EXPECT_GE(seq.rows(), cfg.min_len);
    EXPECT_LE(seq.rows(), cfg.max_len);
    EXPECT_LT(distance_to_standard(seq.row(seq.rows() - 1)), 0.5);
  }
}

TEST(Synth, ClassesDifferInFrameGap) {
  std::vector<double> class_fgd;
  for (int emotion : {0, 5}) {
    std::vector<Matrix> seqs;
    for (int i = 0; i < 20; ++i) {
      RngStream rng(static_cast<std::uint64_t>(100 * emotion + i));
      seqs.push_back(synth_sequence(emotion, 18, 0.02, rng));
    }
    class_fgd.push_back(fgd(seqs));
  }
  EXPECT_GT(std::abs(class_fgd[0] - class_fgd[1]), 0.01);
}
