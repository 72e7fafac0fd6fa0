#pragma once

#include "cteg/config.hpp"
#include "cteg/cvad.hpp"
#include "cteg/ewa.hpp"
#include "cteg/expression.hpp"
#include "cteg/params.hpp"

#include <optional>
#include <vector>

namespace cteg {

struct ModelWeights {
  ExpressionEmbedder embedder;
  std::vector<CvadLayerWeights> layers;
  std::optional<LinearWeights> output;            // absent when the embedder is shared
  std::optional<LinearWeights> guide_projection;  // f_gamma, present when L_g is enabled
};

/// Model space -> expression space. With `share` the frame embedder is
/// reused transposed: (mu - b) W^T.
Tensor project_out(const Tensor& mu_g, const ModelWeights& w, bool share);

/// Teacher-forcing pair: inputs are [avg, f_0 .. f_{T-1}], targets are
/// [f_0 .. f_{T-1}, 0].
struct PreparedSample {
  Matrix inputs;
  Matrix targets;
};

struct LayerStats {
  double kl = 0.0;
  double mean_abs_z = 0.0;
  double posterior_std = 0.0;
};

struct ForwardDiagnostics {
  std::vector<double> kl_per_step;  // summed over layers
  double mean_abs_z = 0.0;
  std::vector<LayerStats> layers;
};

struct ForwardResult {
  SampleTerms terms;
  std::vector<LatentSequence> latents;
  Tensor rec, kl, guide, total;
  ForwardDiagnostics diagnostics;
};

class Model {
 public:
  /// Builds parameters from config.seed; `zero_init` zeroes every weight
  /// (layer-norm gains stay 1).
  explicit Model(ModelConfig config, bool zero_init = false);

  const ModelConfig& config() const noexcept { return config_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ModelWeights& weights() const noexcept { return weights_; }

  const ExpressionFrame& average_expression() const noexcept { return average_; }
  void set_average_expression(const ExpressionFrame& frame);

  /// Full training pass on one sample: embed, trunk views, posterior sample,
  /// LTA, generation, projection and all loss terms.
  ForwardResult teacher_forced_forward(const PreparedSample& sample, const Matrix& text, RngStream& rng) const;

  /// Per-frame predictive means under teacher forcing with prior-mean
  /// latents; row t predicts frames(t) from frames(0..t-1). (T x 53).
  Matrix predictive_means(const ExpressionSequence& frames, const Matrix& text) const;

  /// Text embedding standing for "no text": one zero token.
  Matrix null_text() const { return Matrix::Zero(1, config_.d_model); }

  /// Copies parameter values from `other`, which must share the layout.
  void copy_parameters_from(const Model& other);

 private:
  enum class LatentPolicy { posterior_sample, prior_mean };
  ForwardResult run(const PreparedSample& sample, const Matrix& text, RngStream* rng, LatentPolicy policy) const;

  ModelConfig config_;
  ParameterStore store_;
  ModelWeights weights_;
  ExpressionFrame average_;
};

PreparedSample prepare_targets(const ExpressionSequence& frames, const ExpressionFrame& average, int msl);

}  // namespace cteg
