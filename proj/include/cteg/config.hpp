#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace cteg {

enum class LtaMode { attention, mean_pool };

struct ModelConfig {
  int d_model = 768;
  int heads = 12;
  int d_ff = 2048;
  int n_layers = 1;  // stacked decoder layers
  int msl = 256;
  int max_text_len = 128;
  int epochs = 100;
  int warmup = 4000;
  int batch_size = 16;
  double stop_threshold = 1.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double lr_scale = 1.0;
  /// EwA token width; 0 means d_model / 4.
  int d_attn = 0;
  /// EwA heads; 0 means `heads`.
  int ewa_heads = 0;
  int jaw_split = 50;

  bool use_ewa = true;
  bool use_lta = true;
  bool use_lg = true;
  LtaMode lta_mode = LtaMode::attention;
  bool share_projection = false;
  bool sample_reconstruction = false;

  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 0;

  int effective_d_attn() const { return d_attn > 0 ? d_attn : d_model / 4; }
  int effective_ewa_heads() const { return ewa_heads > 0 ? ewa_heads : heads; }

  /// Throws ConfigError on the first violated invariant.
  void validate() const;

  /// Small model that trains in seconds on one CPU core.
  static ModelConfig desk();
};

nlohmann::json to_json(const ModelConfig& config);
/// Strict: unknown keys and wrongly typed values throw ConfigError.
/// Missing keys keep their defaults.
ModelConfig config_from_json(const nlohmann::json& doc);
/// Applies the entries of `doc` that name ModelConfig fields onto `config`,
/// returning the keys that were not recognized.
std::vector<std::string> apply_config(ModelConfig& config, const nlohmann::json& doc);

std::string to_string(LtaMode mode);

}  // namespace cteg
