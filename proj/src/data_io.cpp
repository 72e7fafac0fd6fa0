#include "cteg/data_io.hpp"

#include "cteg/binary_io.hpp"
#include "cteg/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace cteg {

namespace binary {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace binary

// ---------------------------------------------------------------------------
// sequence files

std::string encode_matrix_file(const Matrix& frames) {
  if (frames.rows() < 1) throw ContractError("sequence file: need at least one frame");
  binary::Writer w;
  w.bytes("EXP1");
  w.u8(kSequenceFormatVersion);
  w.u32(static_cast<std::uint32_t>(frames.rows()));
  w.u32(static_cast<std::uint32_t>(frames.cols()));
  for (Index i = 0; i < frames.size(); ++i) w.f32(static_cast<float>(frames.data()[i]));
  return w.data();
}

Matrix decode_matrix_file(std::string_view bytes, const std::string& context) {
  binary::Reader r(bytes, context);
  if (r.bytes(4) != "EXP1") throw FormatError(context + ": bad magic", 0);
  const auto version = r.u8();
  if (version != kSequenceFormatVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(version), 4);
  }
  const std::uint64_t rows = r.u32();
  const std::uint64_t cols = r.u32();
  if (rows == 0 || cols == 0) throw FormatError(context + ": empty matrix declared", 5);
  const std::uint64_t expected = rows * cols * 4;
  if (r.remaining() != expected) {
    throw FormatError(context + ": header declares " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " values but payload has " + std::to_string(r.remaining()) + " bytes",
                      r.position());
  }
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(r.f32());
  return m;
}

void write_sequence(const ExpressionSequence& frames, const std::string& path) {
  if (frames.cols() != kExpressionDim) {
    throw ContractError("write_sequence: frames have " + std::to_string(frames.cols()) + " dims, expected 53");
  }
  binary::write_file(path, encode_matrix_file(frames));
}

ExpressionSequence read_sequence(const std::string& path) {
  Matrix m = decode_matrix_file(binary::read_file(path), path);
  if (m.cols() != kExpressionDim) throw FormatError(path + ": expected 53 dims, found " + std::to_string(m.cols()), 9);
  return m;
}

// ---------------------------------------------------------------------------
// manifest

ExpressionSequence parse_csv_sequence(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw FormatError("csv line " + std::to_string(line_no) + ": '" + cell + "' is not a number");
      }
    }
    if (row.size() != static_cast<std::size_t>(kExpressionDim)) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected 53 values, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("csv: no frames");
  ExpressionSequence out(static_cast<Index>(rows.size()), kExpressionDim);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (Index k = 0; k < kExpressionDim; ++k) out(static_cast<Index>(t), k) = rows[t][static_cast<std::size_t>(k)];
  }
  validate_sequence(out);
  return out;
}

ExpressionSequence read_csv_sequence(const std::string& path) { return parse_csv_sequence(binary::read_file(path)); }

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::valid:
      return "valid";
    case Split::test:
      return "test";
  }
  return "train";
}

std::vector<ManifestRecord> DatasetManifest::split(Split which) const {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [which](const ManifestRecord& r) { return r.split == which; });
  return out;
}

std::string DatasetManifest::resolve(const ManifestRecord& r) const {
  fs::path p(r.expr_path);
  if (p.is_absolute()) return p.string();
  return (fs::path(root) / p).string();
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path().string();
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = path + ":" + std::to_string(line_no);
    if (fields.size() != 4) {
      throw FormatError(where + ": expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    }
    ManifestRecord rec;
    rec.id = fields[0];
    if (fields[1] == "train") {
      rec.split = Split::train;
    } else if (fields[1] == "valid") {
      rec.split = Split::valid;
    } else if (fields[1] == "test") {
      rec.split = Split::test;
    } else {
      throw FormatError(where + ": unknown split '" + fields[1] + "'");
    }
    rec.text = fields[2];
    rec.expr_path = fields[3];
    if (rec.id.empty() || rec.expr_path.empty()) throw FormatError(where + ": empty id or path");
    if (!ids.insert(rec.id).second) throw FormatError("manifest: duplicate record id '" + rec.id + "'");
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty()) warn("manifest '" + path + "' has no records");
  if (check_files) {
    for (const ManifestRecord& r : manifest.records) {
      if (!fs::exists(manifest.resolve(r))) {
        throw FormatError("manifest: record '" + r.id + "' points to missing file '" + r.expr_path + "'");
      }
    }
  }
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ostringstream out;
  for (const ManifestRecord& r : manifest.records) {
    if (r.text.find('\t') != std::string::npos || r.text.find('\n') != std::string::npos) {
      throw ContractError("manifest: text of '" + r.id + "' contains a tab or newline");
    }
    out << r.id << '\t' << to_string(r.split) << '\t' << r.text << '\t' << r.expr_path << '\n';
  }
  binary::write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// text encoders

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

ToyTextEncoder::ToyTextEncoder(Index d_model, std::uint64_t seed, Index max_len)
    : d_model_(d_model), seed_(seed), max_len_(max_len) {
  if (d_model < 1 || max_len < 1) throw ContractError("ToyTextEncoder: d_model and max_len must be positive");
}

Matrix ToyTextEncoder::encode(std::string_view text) const {
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) return Matrix::Zero(1, d_model_);
  if (static_cast<Index>(tokens.size()) > max_len_) tokens.resize(static_cast<std::size_t>(max_len_));
  Matrix out(static_cast<Index>(tokens.size()), d_model_);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    RngStream rng(mix64(fnv1a64(tokens[i]) ^ mix64(seed_)));
    RowVector v = rng.normal_matrix(1, d_model_).row(0);
    out.row(static_cast<Index>(i)) = v / v.norm();
  }
  return out;
}

PrecomputedEmbeddings PrecomputedEmbeddings::load(const std::string& dir, Index d_model, Index max_len) {
  if (!fs::is_directory(dir)) throw IoError("embedding directory '" + dir + "' does not exist");
  PrecomputedEmbeddings out;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".emb") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    Matrix m = decode_matrix_file(binary::read_file(p.string()), p.string());
    if (m.cols() != d_model) {
      throw ContractError("embedding '" + p.string() + "' has width " + std::to_string(m.cols()) +
                          ", model expects " + std::to_string(d_model));
    }
    if (m.rows() > max_len) {
      warn("embedding '" + p.stem().string() + "' truncated from " + std::to_string(m.rows()) + " to " +
           std::to_string(max_len) + " tokens");
      m.conservativeResize(max_len, Eigen::NoChange);
    }
    out.table_.emplace(p.stem().string(), std::move(m));
  }
  return out;
}

const Matrix& PrecomputedEmbeddings::get(const std::string& id) const {
  auto it = table_.find(id);
  if (it == table_.end()) throw ContractError("no precomputed embedding for record '" + id + "'");
  return it->second;
}

void write_embedding(const Matrix& embedding, const std::string& path) {
  binary::write_file(path, encode_matrix_file(embedding));
}

namespace {

template <typename Embed>
Dataset load_with(const DatasetManifest& manifest, Split split, Embed&& embed) {
  Dataset out;
  for (const ManifestRecord& r : manifest.split(split)) {
    TrainingExample ex;
    ex.id = r.id;
    ex.text = r.text;
    ex.frames = read_sequence(manifest.resolve(r));
    ex.text_embedding = embed(r);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

Dataset load_examples(const DatasetManifest& manifest, Split split, const TextEncoder& encoder) {
  return load_with(manifest, split, [&](const ManifestRecord& r) { return encoder.encode(r.text); });
}

Dataset load_examples(const DatasetManifest& manifest, Split split, const PrecomputedEmbeddings& embeddings) {
  return load_with(manifest, split, [&](const ManifestRecord& r) { return embeddings.get(r.id); });
}

// ---------------------------------------------------------------------------
// average expression

ExpressionFrame average_expression(const std::vector<ExpressionSequence>& sequences) {
  if (sequences.empty()) throw ContractError("average_expression: empty training split");
  RowVector total = RowVector::Zero(kExpressionDim);
  Index count = 0;
  for (const ExpressionSequence& s : sequences) {
    validate_sequence(s);
    total += s.colwise().sum();
    count += s.rows();
  }
  if (count == 0) throw ContractError("average_expression: no frames");
  return total / static_cast<double>(count);
}

ExpressionFrame average_expression(const Dataset& examples) {
  std::vector<ExpressionSequence> seqs;
  seqs.reserve(examples.size());
  for (const TrainingExample& e : examples) seqs.push_back(e.frames);
  return average_expression(seqs);
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

struct EmotionProfile {
  std::vector<Index> dims;
  std::vector<double> base, amplitude, frequency;
};

// Emotion c drives face coefficients [7c, 7c + 7); some emotions also move the jaw.
EmotionProfile emotion_profile(int emotion) {
  RngStream rng(mix64(0xE5A1ULL + static_cast<std::uint64_t>(emotion)));
  EmotionProfile p;
  for (Index k = 0; k < 7; ++k) p.dims.push_back((7 * emotion + k) % kDefaultJawSplit);
  const bool jaw = emotion % 2 == 0;
  if (jaw) {
    for (Index k = kDefaultJawSplit; k < kExpressionDim; ++k) p.dims.push_back(k);
  }
  for (std::size_t i = 0; i < p.dims.size(); ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    p.base.push_back(sign * (0.6 + 0.6 * rng.uniform()));
    p.amplitude.push_back(0.3 + 0.5 * rng.uniform());
    p.frequency.push_back(0.5 + 0.2 * static_cast<double>(emotion) + 0.3 * rng.uniform());
  }
  return p;
}

const std::vector<std::string>& subjects() {
  static const std::vector<std::string> s = {"she", "he", "they", "my friend", "the teacher", "the old man",
                                             "the child"};
  return s;
}

const std::vector<std::string>& tails() {
  static const std::vector<std::string> s = {"at the news", "in the kitchen", "after the call",
                                             "during the meeting", "on the train", "without a word"};
  return s;
}

std::vector<std::string> emotion_words(const std::string& emotion) {
  if (emotion == "happy") return {"laughed happily", "smiled joyfully", "grinned with delight"};
  if (emotion == "sad") return {"cried sadly", "sighed in sorrow", "wept quietly"};
  if (emotion == "neutral") return {"spoke calmly", "nodded plainly", "answered evenly"};
  if (emotion == "disgust") return {"frowned in disgust", "grimaced with revulsion", "recoiled in distaste"};
  if (emotion == "fear") return {"trembled in fear", "gasped fearfully", "shrank in terror"};
  if (emotion == "surprise") return {"gasped in surprise", "stared in astonishment", "jumped amazed"};
  if (emotion == "angry") return {"shouted angrily", "glared in rage", "snapped furiously"};
  return {"felt " + emotion, "looked " + emotion, "seemed " + emotion};
}

template <typename T>
const T& pick(const std::vector<T>& v, RngStream& rng) {
  return v[static_cast<std::size_t>(rng.below(v.size()))];
}

}  // namespace

ExpressionSequence synth_sequence(int emotion, int length, double noise, RngStream& rng) {
  if (length < 2) throw ContractError("synth_sequence: length must be >= 2");
  const EmotionProfile p = emotion_profile(emotion);
  ExpressionSequence seq = ExpressionSequence::Zero(length, kExpressionDim);
  const double jitter = 0.8 + 0.4 * rng.uniform();
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  for (Index t = 0; t < length; ++t) {
    const double s = static_cast<double>(t) / static_cast<double>(length - 1);
    const double envelope = 1.0 - s * s * s * s;
    for (std::size_t i = 0; i < p.dims.size(); ++i) {
      const double wave = std::sin(2.0 * std::numbers::pi * p.frequency[i] * s + phase + static_cast<double>(i));
      seq(t, p.dims[i]) = envelope * (p.base[i] + jitter * p.amplitude[i] * wave);
    }
  }
  seq += noise * rng.normal_matrix(length, kExpressionDim);
  return seq;
}

SynthSummary synth_dataset(const SynthConfig& config, const std::string& out_dir) {
  if (config.n_pairs < 1) throw ContractError("synth_dataset: n_pairs must be >= 1");
  if (config.emotions.empty()) throw ContractError("synth_dataset: need at least one emotion class");
  if (config.min_len < 2 || config.max_len < config.min_len) throw ContractError("synth_dataset: bad length range");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "seqs", ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());

  RngStream rng(config.seed);
  SynthSummary summary;
  summary.manifest.root = out_dir;
  std::vector<std::pair<std::string, int>> texts;  // (text, emotion) used so far
  std::map<std::string, int> text_uses;
  for (int i = 0; i < config.n_pairs; ++i) {
    RngStream local = rng.split(static_cast<std::uint64_t>(i));
    int emotion;
    std::string text;
    if (!texts.empty() && local.uniform() < config.one_to_n_fraction) {
      const auto& reused = pick(texts, local);
      text = reused.first;
      emotion = reused.second;
    } else {
      emotion = static_cast<int>(local.below(config.emotions.size()));
      text = pick(subjects(), local) + " " + pick(emotion_words(config.emotions[static_cast<std::size_t>(emotion)]), local) +
             " " + pick(tails(), local);
      texts.emplace_back(text, emotion);
    }
    ++text_uses[text];
    const int length = config.min_len + static_cast<int>(local.below(static_cast<std::uint64_t>(config.max_len - config.min_len + 1)));
    const ExpressionSequence seq = synth_sequence(emotion, length, config.noise, local);

    ManifestRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05d", i);
    rec.id = id;
    const double u = local.uniform();
    rec.split = u < config.test_fraction                           ? Split::test
                : u < config.test_fraction + config.valid_fraction ? Split::valid
                                                                   : Split::train;
    rec.text = text;
    rec.expr_path = "seqs/" + rec.id + ".exp";
    write_sequence(seq, (fs::path(out_dir) / rec.expr_path).string());
    summary.frames += static_cast<std::size_t>(seq.rows());
    summary.emotion_of_record.push_back(emotion);
    summary.manifest.records.push_back(std::move(rec));
  }
  for (const ManifestRecord& r : summary.manifest.records) {
    if (text_uses[r.text] > 1) ++summary.one_to_n;
  }
  write_manifest(summary.manifest, (fs::path(out_dir) / "manifest.tsv").string());
  return summary;
}

}  // namespace cteg
