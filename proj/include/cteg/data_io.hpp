#pragma once

// Dataset files, text encoders and the synthetic corpus generator.
//
// Sequence file layout (little-endian):
//   "EXP1" | u8 version = 1 | u32 T | u32 d | T*d f32, row-major
// Manifest: UTF-8, one record per line, tab separated:
//   id <TAB> split <TAB> text <TAB> expr_path
// Embedding files use the sequence layout with d = d_model.

#include "cteg/expression.hpp"
#include "cteg/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace cteg {

inline constexpr std::uint8_t kSequenceFormatVersion = 1;

std::string encode_matrix_file(const Matrix& frames);
/// Throws FormatError (with byte offset) on bad magic, version or length.
Matrix decode_matrix_file(std::string_view bytes, const std::string& context = "sequence");

/// Requires T >= 1 and d == 53.
void write_sequence(const ExpressionSequence& frames, const std::string& path);
ExpressionSequence read_sequence(const std::string& path);

/// Hand-authored fixtures: one frame per line, 53 comma-separated numbers.
/// Blank lines and lines starting with '#' are ignored.
ExpressionSequence parse_csv_sequence(std::string_view text);
ExpressionSequence read_csv_sequence(const std::string& path);

enum class Split { train, valid, test };
std::string to_string(Split split);

struct ManifestRecord {
  std::string id;
  Split split = Split::train;
  std::string text;
  std::string expr_path;  // relative to the manifest's directory
};

struct DatasetManifest {
  std::string root;  // directory holding the manifest
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(Split which) const;
  std::string resolve(const ManifestRecord& r) const;
};

/// Parses and validates a manifest. Malformed lines name their line number;
/// duplicate ids and (when `check_files`) missing sequence files name the
/// record id.
DatasetManifest load_manifest(const std::string& path, bool check_files = true);
void write_manifest(const DatasetManifest& manifest, const std::string& path);

/// Frozen text encoder: text -> (L x d_model) token embeddings.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::string name() const = 0;
  virtual Index d_model() const = 0;
  virtual Matrix encode(std::string_view text) const = 0;
  bool frozen() const { return true; }
};

/// Deterministic stand-in for a pretrained encoder. Tokens are lowercase
/// whitespace-separated words; token k maps to a unit vector drawn from
/// RngStream(mix64(fnv1a64(token) ^ mix64(seed))). Texts longer than
/// max_len tokens are truncated; an empty text encodes as one zero row.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(Index d_model, std::uint64_t seed = 0, Index max_len = 128);

  std::string name() const override { return "toy"; }
  Index d_model() const override { return d_model_; }
  Matrix encode(std::string_view text) const override;

 private:
  Index d_model_;
  std::uint64_t seed_;
  Index max_len_;
};

std::uint64_t fnv1a64(std::string_view s);
std::vector<std::string> tokenize(std::string_view text);

/// Embeddings produced offline by a real encoder, one file per record id
/// (`<dir>/<id>.emb`, sequence layout).
class PrecomputedEmbeddings {
 public:
  /// Loads every `*.emb` file in `dir`; d must equal d_model, rows beyond
  /// max_len are dropped with a warning.
  static PrecomputedEmbeddings load(const std::string& dir, Index d_model, Index max_len = 128);

  const Matrix& get(const std::string& id) const;
  bool contains(const std::string& id) const { return table_.count(id) != 0; }
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, Matrix> table_;
};

void write_embedding(const Matrix& embedding, const std::string& path);

struct TrainingExample {
  std::string id;
  std::string text;
  ExpressionSequence frames;
  Matrix text_embedding;
};

using Dataset = std::vector<TrainingExample>;

Dataset load_examples(const DatasetManifest& manifest, Split split, const TextEncoder& encoder);
Dataset load_examples(const DatasetManifest& manifest, Split split, const PrecomputedEmbeddings& embeddings);

/// Per-dimension mean over every frame of every sequence.
ExpressionFrame average_expression(const std::vector<ExpressionSequence>& sequences);
ExpressionFrame average_expression(const Dataset& examples);

struct SynthConfig {
  int n_pairs = 200;
  std::vector<std::string> emotions = {"happy", "sad", "neutral", "disgust", "fear", "surprise", "angry"};
  int min_len = 12;
  int max_len = 24;
  double noise = 0.02;
  double one_to_n_fraction = 0.15;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct SynthSummary {
  DatasetManifest manifest;
  std::size_t frames = 0;
  std::size_t one_to_n = 0;  // records whose text also labels another record
  std::vector<int> emotion_of_record;
};

/// Smooth per-emotion trajectory of `length` frames decaying to the standard
/// face. Deterministic in (emotion, rng).
ExpressionSequence synth_sequence(int emotion, int length, double noise, RngStream& rng);

/// Writes `<out_dir>/manifest.tsv` and `<out_dir>/seqs/*.exp`.
SynthSummary synth_dataset(const SynthConfig& config, const std::string& out_dir);

}  // namespace cteg
