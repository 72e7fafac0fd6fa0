#pragma once

// Conditional variational autoregressive decoder: posterior/prior heads,
// reparameterized latents, latent temporal attention, the generation
// network and its loss terms.
//
// Sequences are (T x d) tensors indexed by step. Step t of an unshifted view
// sees frames 0..t; a shifted view sees frames 0..t-1 only.

#include "cteg/config.hpp"
#include "cteg/ewa.hpp"
#include "cteg/rng.hpp"
#include "cteg/transformer.hpp"

#include <span>
#include <vector>

namespace cteg {

/// Diagonal Gaussian per step: both tensors are (T x d_z).
struct GaussianDiag {
  Tensor mu;
  Tensor log_var;
};

enum class LatentSource { posterior, prior };

struct LatentSequence {
  Tensor z;  // (T x d_z), d_z == d_model
  LatentSource source = LatentSource::posterior;
};

struct CvadLayerWeights {
  // trunk
  Tensor start;  // learned sentinel for the shifted view, 1 x d_model
  LayerNormWeights cross_norm;
  AttentionWeights cross;
  LayerNormWeights self_norm;
  AttentionWeights self;
  LayerNormWeights trunk_out_norm;
  // Gaussian heads
  LinearWeights posterior_mu, posterior_log_var;
  LinearWeights prior_mu, prior_log_var;
  // latent temporal attention (absent for mean pooling / pass-through)
  LayerNormWeights lta_norm;
  std::optional<AttentionWeights> lta;
  // generation network
  LayerNormWeights gen_cross_norm;
  AttentionWeights gen_cross;
  LayerNormWeights gen_ffn_norm;
  FFNWeights gen_ffn;
  // target guidance
  FFNWeights guide_ffn;
};

CvadLayerWeights make_cvad_layer(ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                                 Initializer& init);

/// Pre-norm cross attention over the text followed by causal self attention.
/// shifted == false conditions step t on h[0..t]; shifted == true replaces
/// row 0 by the learned sentinel and moves every row one step later.
Tensor trunk(const Tensor& h, const Tensor& text, bool shifted, const CvadLayerWeights& w);

GaussianDiag posterior_params(const Tensor& o_unshifted, const CvadLayerWeights& w);
GaussianDiag prior_params(const Tensor& o_shifted, const CvadLayerWeights& w);

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `rng`.
Tensor reparameterize(const GaussianDiag& g, RngStream& rng);
/// Same with caller-supplied noise.
Tensor reparameterize(const GaussianDiag& g, const Matrix& eps);

enum class LtaKind { attention, mean_pool, pass_through };

LtaKind lta_kind(const ModelConfig& config);

/// Right-shifts z with a zero sentinel so that row t is built from z[0..t-1]
/// only, then mixes the history: causal attention (with residual),
/// cumulative mean of z[0..t-1] (zero at t = 0), or no mixing.
Tensor lta(const Tensor& z, const CvadLayerWeights& w, LtaKind kind);

/// Queries (input + z_tilde) attend over the text, then a position-wise FFN,
/// each with pre-norm and residual. Output stays in model space.
Tensor generation_mean(const Tensor& input, const Tensor& z_tilde, const Tensor& text, const CvadLayerWeights& w);

/// Closed-form KL(q || p) for diagonal Gaussians, summed over latent dims.
template <typename D1, typename D2, typename D3, typename D4>
double kl_term(const Eigen::MatrixBase<D1>& mu_q, const Eigen::MatrixBase<D2>& log_var_q,
               const Eigen::MatrixBase<D3>& mu_p, const Eigen::MatrixBase<D4>& log_var_p) {
  const auto var_q = log_var_q.array().exp();
  const auto var_p = log_var_p.array().exp();
  return (0.5 * (log_var_p.array() - log_var_q.array()) +
          (var_q + (mu_q.array() - mu_p.array()).square()) / (2.0 * var_p) - 0.5)
      .sum();
}

/// Per-step KL as a (T x 1) tensor.
Tensor kl_per_step(const GaussianDiag& q, const GaussianDiag& p);

/// Mean squared error between targets and predictions; lengths must match.
Tensor reconstruction_loss(const Tensor& prediction, const Tensor& targets);

/// f_gamma(sum_i FFN_i(shifted z^i)) scored against the targets by MSE.
Tensor target_guided_loss(std::span<const LatentSequence> z_layers, const Tensor& targets,
                          std::span<const CvadLayerWeights> layers, const LinearWeights& projection);

struct CvadLoss {
  Tensor rec;
  Tensor kl;
};

struct SampleTerms {
  Tensor prediction;
  Tensor targets;
  std::vector<GaussianDiag> posterior;
  std::vector<GaussianDiag> prior;
};

/// Reconstruction and KL terms averaged over the batch.
CvadLoss cvad_loss(std::span<const SampleTerms> batch);

/// L_rec + L_KL + L_g; an undefined `guide` counts as zero.
Tensor total_loss(const CvadLoss& cvad, const Tensor& guide);

}  // namespace cteg
