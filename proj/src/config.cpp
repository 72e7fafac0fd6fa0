#include "cteg/config.hpp"

#include "cteg/errors.hpp"

#include <functional>
#include <map>
#include <vector>

namespace cteg {

using nlohmann::json;

std::string to_string(LtaMode mode) { return mode == LtaMode::attention ? "attention" : "mean_pool"; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.d_model = 64;
  c.heads = 4;
  c.d_ff = 128;
  c.msl = 64;
  c.epochs = 30;
  c.warmup = 200;
  c.batch_size = 8;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key, key + ": " + why); };
  if (d_model < 2 || d_model % 2 != 0) fail("d_model", "must be even and >= 2");
  if (heads < 1 || d_model % heads != 0) fail("heads", "must divide d_model");
  if (d_ff < 1) fail("d_ff", "must be >= 1");
  if (n_layers < 1) fail("n_layers", "must be >= 1");
  if (msl < 1) fail("msl", "must be >= 1");
  if (max_text_len < 1) fail("max_text_len", "must be >= 1");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (warmup < 1) fail("warmup", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(stop_threshold >= 0.0)) fail("stop_threshold", "must be >= 0");
  if (!(lr_scale > 0.0)) fail("lr_scale", "must be positive");
  if (effective_d_attn() < 1) fail("d_attn", "must be >= 1");
  if (effective_d_attn() % effective_ewa_heads() != 0) fail("ewa_heads", "must divide d_attn");
  if (jaw_split < 1 || jaw_split >= 53) fail("jaw_split", "must lie in [1, 52]");
}

namespace {

template <typename T>
void read_value(const json& v, const std::string& key, T& out) {
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, key + ": wrong value type");
  }
}

using Field = std::pair<std::function<void(json&, const ModelConfig&)>,
                        std::function<void(ModelConfig&, const json&, const std::string&)>>;

template <typename T>
Field field(T ModelConfig::*member) {
  return {[member](json& out, const ModelConfig& c) { out = c.*member; },
          [member](ModelConfig& c, const json& v, const std::string& key) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!v.is_boolean()) throw ConfigError(key, key + ": expected true/false");
            } else if constexpr (std::is_integral_v<T>) {
              if (!v.is_number_integer()) throw ConfigError(key, key + ": expected an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
              if (!v.is_number()) throw ConfigError(key, key + ": expected a number");
            }
            read_value(v, key, c.*member);
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"d_model", field(&ModelConfig::d_model)},
      {"heads", field(&ModelConfig::heads)},
      {"d_ff", field(&ModelConfig::d_ff)},
      {"n_layers", field(&ModelConfig::n_layers)},
      {"msl", field(&ModelConfig::msl)},
      {"max_text_len", field(&ModelConfig::max_text_len)},
      {"epochs", field(&ModelConfig::epochs)},
      {"warmup", field(&ModelConfig::warmup)},
      {"batch_size", field(&ModelConfig::batch_size)},
      {"stop_threshold", field(&ModelConfig::stop_threshold)},
      {"clip_norm", field(&ModelConfig::clip_norm)},
      {"lr_scale", field(&ModelConfig::lr_scale)},
      {"d_attn", field(&ModelConfig::d_attn)},
      {"ewa_heads", field(&ModelConfig::ewa_heads)},
      {"jaw_split", field(&ModelConfig::jaw_split)},
      {"use_ewa", field(&ModelConfig::use_ewa)},
      {"use_lta", field(&ModelConfig::use_lta)},
      {"use_lg", field(&ModelConfig::use_lg)},
      {"share_projection", field(&ModelConfig::share_projection)},
      {"sample_reconstruction", field(&ModelConfig::sample_reconstruction)},
      {"seed", field(&ModelConfig::seed)},
      {"encoder_seed", field(&ModelConfig::encoder_seed)},
      {"lta_mode",
       {[](json& out, const ModelConfig& c) { out = to_string(c.lta_mode); },
        [](ModelConfig& c, const json& v, const std::string& key) {
          if (v == "attention") {
            c.lta_mode = LtaMode::attention;
          } else if (v == "mean_pool") {
            c.lta_mode = LtaMode::mean_pool;
          } else {
            throw ConfigError(key, key + ": expected \"attention\" or \"mean_pool\"");
          }
        }}},
  };
  return table;
}

}  // namespace

json to_json(const ModelConfig& config) {
  json doc = json::object();
  for (const auto& [key, f] : fields()) f.first(doc[key], config);
  return doc;
}

std::vector<std::string> apply_config(ModelConfig& config, const json& doc) {
  if (!doc.is_object()) throw ConfigError("", "configuration must be a key-value object");
  std::vector<std::string> unknown;
  for (const auto& [key, value] : doc.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) {
      unknown.push_back(key);
      continue;
    }
    it->second.second(config, value, key);
  }
  return unknown;
}

ModelConfig config_from_json(const json& doc) {
  ModelConfig config;
  const auto unknown = apply_config(config, doc);
  if (!unknown.empty()) throw ConfigError(unknown.front(), "unknown configuration key '" + unknown.front() + "'");
  config.validate();
  return config;
}

}  // namespace cteg
