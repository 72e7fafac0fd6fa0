#pragma once

// Training, decoding and checkpoints.
//
// Checkpoint layout (little-endian):
//   "CTEG" | u32 version | u32 n + n bytes JSON config | u32 tensor count |
//   per tensor: u16 name length, name, u8 rank, u32 dims..., f32 data |
//   zero or more sections: 4-byte tag, u32 payload length, payload.
// Sections: "OPTM" Adam moments (f64), "RNGS" random stream and training
// cursor, "MW64" the f64 master copy of every tensor (same order), which
// takes precedence over the f32 data when present so resumed training is
// exact.

#include "cteg/config.hpp"
#include "cteg/data_io.hpp"
#include "cteg/model.hpp"

#include <functional>
#include <span>
#include <optional>
#include <string>
#include <vector>

namespace cteg {

/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); step >= 1.
double lr_at(long step, int d_model, int warmup);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamState {
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One bias-corrected Adam update on a single tensor; `t` is the 1-based
/// step count after this update.
void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t, double lr,
                 const AdamOptions& options = {});

/// Updates every parameter from its grad() scaled by `grad_scale`.
void adam_step(std::span<const NamedTensor> params, AdamState& state, double lr, double grad_scale = 1.0,
               const AdamOptions& options = {});

/// Global L2 norm of the gradients.
double grad_norm(std::span<const NamedTensor> params);

struct TrainCursor {
  long step = 0;  // completed optimizer steps
  int epoch = 0;
  int batch = 0;  // next batch within `epoch`
};

struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig config;
  std::vector<std::pair<std::string, MatrixX<float>>> tensors;
  std::optional<std::vector<Matrix>> master;  // f64 values, aligned with `tensors`
  std::optional<AdamState> optimizer;
  std::optional<TrainCursor> cursor;
  std::optional<std::string> rng_state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kAverageTensorName = "average_expression";

Checkpoint make_checkpoint(const Model& model, bool exact_weights = true);
Model model_from_checkpoint(const Checkpoint& ckpt);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws FormatError on bad magic, version or truncation.
Checkpoint load_checkpoint(const std::string& path);

struct TrainLogEntry {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double rec = 0.0;
  double kl = 0.0;
  double guide = 0.0;
  double total = 0.0;
  double mean_abs_z = 0.0;
  double grad_norm = 0.0;
};

struct TrainOptions {
  /// Stop after this many optimizer steps in total (including steps done
  /// before a resume); negative means run all epochs.
  long max_steps = -1;
  /// Continue from a checkpoint saved by train().
  const Checkpoint* resume = nullptr;
  /// Scored at the end of each epoch to pick the best checkpoint; the
  /// training split is used when empty.
  const Dataset* validation = nullptr;
  std::function<void(const TrainLogEntry&)> on_step;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::vector<TrainLogEntry> log;
  std::vector<double> epoch_total;  // mean total loss per completed epoch
};

/// Teacher-forced minibatch training with Adam and the warmup schedule.
/// Fully determined by (config, dataset); throws DivergenceError on a
/// non-finite loss.
TrainResult train(const ModelConfig& config, const Dataset& dataset, const TrainOptions& options = {});

/// Batches of one epoch: indices grouped by sequence length, batch order
/// shuffled from (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, int batch_size, std::uint64_t seed,
                                                    int epoch);

enum class StopReason { threshold, msl };
std::string to_string(StopReason reason);

struct DecodeOptions {
  std::optional<int> msl;
  std::optional<double> threshold;
};

struct DecodeResult {
  ExpressionSequence frames;  // excludes the priming and terminating frames
  StopReason reason = StopReason::msl;
};

/// Autoregressive generation primed with the average expression; latents
/// come from the prior. Stops when a predicted frame lies within
/// `threshold` of the standard face or after `msl` frames.
DecodeResult decode(const Model& model, const Matrix& text_embedding, RngStream& rng, const DecodeOptions& options = {});
DecodeResult decode(std::string_view text, const Model& model, const TextEncoder& encoder, RngStream& rng,
                    const DecodeOptions& options = {});

}  // namespace cteg
