#include "cteg/cvad.hpp"

#include "cteg/errors.hpp"

namespace cteg {

CvadLayerWeights make_cvad_layer(ParameterStore& store, const std::string& prefix, const ModelConfig& config,
                                 Initializer& init) {
  const Index d = config.d_model;
  const Index heads = config.heads;
  CvadLayerWeights w;
  w.start = store.add(prefix + ".trunk.start", init.normal(1, d, 0.1));
  w.cross_norm = make_layer_norm(store, prefix + ".trunk.cross_norm", d, init);
  w.cross = make_attention(store, prefix + ".trunk.cross", d, heads, init);
  w.self_norm = make_layer_norm(store, prefix + ".trunk.self_norm", d, init);
  w.self = make_attention(store, prefix + ".trunk.self", d, heads, init);
  w.trunk_out_norm = make_layer_norm(store, prefix + ".trunk.out_norm", d, init);

  w.posterior_mu = make_linear(store, prefix + ".posterior.mu", d, d, init);
  w.posterior_log_var = {store.add(prefix + ".posterior.log_var.w", init.normal(d, d, 0.01)),
                         store.add(prefix + ".posterior.log_var.b", init.zeros(1, d))};
  w.prior_mu = make_linear(store, prefix + ".prior.mu", d, d, init);
  w.prior_log_var = {store.add(prefix + ".prior.log_var.w", init.normal(d, d, 0.01)),
                     store.add(prefix + ".prior.log_var.b", init.zeros(1, d))};

  if (lta_kind(config) == LtaKind::attention) {
    w.lta_norm = make_layer_norm(store, prefix + ".lta.norm", d, init);
    w.lta = make_attention(store, prefix + ".lta.attn", d, heads, init);
  }

  w.gen_cross_norm = make_layer_norm(store, prefix + ".gen.cross_norm", d, init);
  w.gen_cross = make_attention(store, prefix + ".gen.cross", d, heads, init);
  w.gen_ffn_norm = make_layer_norm(store, prefix + ".gen.ffn_norm", d, init);
  w.gen_ffn = make_ffn(store, prefix + ".gen.ffn", d, config.d_ff, init);

  if (config.use_lg) w.guide_ffn = make_ffn(store, prefix + ".guide.ffn", d, config.d_ff, init);
  return w;
}

Tensor trunk(const Tensor& h, const Tensor& text, bool shifted, const CvadLayerWeights& w) {
  if (text.rows() < 1) throw ContractError("trunk: text embedding is empty");
  const Tensor input = shifted ? shift_down(h, w.start) : h;
  const Tensor normed = apply_layer_norm(input, w.cross_norm);
  const Tensor a = input + multi_head_attention(normed, text, text, nullptr, w.cross);
  const Mask mask = causal_mask(a.rows(), true);
  const Tensor a_normed = apply_layer_norm(a, w.self_norm);
  const Tensor b = a + multi_head_attention(a_normed, a_normed, a_normed, &mask, w.self);
  return apply_layer_norm(b, w.trunk_out_norm);
}

GaussianDiag posterior_params(const Tensor& o_unshifted, const CvadLayerWeights& w) {
  return {linear(o_unshifted, w.posterior_mu), linear(o_unshifted, w.posterior_log_var)};
}

GaussianDiag prior_params(const Tensor& o_shifted, const CvadLayerWeights& w) {
  return {linear(o_shifted, w.prior_mu), linear(o_shifted, w.prior_log_var)};
}

Tensor reparameterize(const GaussianDiag& g, const Matrix& eps) {
  if (eps.rows() != g.mu.rows() || eps.cols() != g.mu.cols()) {
    throw DimensionError("reparameterize: noise shape does not match the Gaussian");
  }
  const Tensor std_dev = exp(0.5 * g.log_var);
  return g.mu + hadamard(std_dev, Tensor::constant(eps));
}

Tensor reparameterize(const GaussianDiag& g, RngStream& rng) {
  return reparameterize(g, rng.normal_matrix(g.mu.rows(), g.mu.cols()));
}

LtaKind lta_kind(const ModelConfig& config) {
  if (!config.use_lta) return LtaKind::pass_through;
  return config.lta_mode == LtaMode::attention ? LtaKind::attention : LtaKind::mean_pool;
}

Tensor lta(const Tensor& z, const CvadLayerWeights& w, LtaKind kind) {
  const Index steps = z.rows();
  if (steps < 1) throw ContractError("lta: empty latent sequence");
  switch (kind) {
    case LtaKind::pass_through:
      return shift_down(z, Tensor::constant(Matrix::Zero(1, z.cols())));
    case LtaKind::mean_pool: {
      Matrix averaging = Matrix::Zero(steps, steps);
      for (Index t = 1; t < steps; ++t) averaging.row(t).head(t).setConstant(1.0 / static_cast<double>(t));
      return matmul(Tensor::constant(std::move(averaging)), z);
    }
    case LtaKind::attention: {
      if (!w.lta) throw ContractError("lta: layer has no attention weights");
      const Tensor shifted = shift_down(z, Tensor::constant(Matrix::Zero(1, z.cols())));
      const Mask mask = causal_mask(steps, true);
      const Tensor normed = apply_layer_norm(shifted, w.lta_norm);
      return shifted + multi_head_attention(normed, normed, normed, &mask, *w.lta);
    }
  }
  throw ContractError("lta: unknown mode");
}

Tensor generation_mean(const Tensor& input, const Tensor& z_tilde, const Tensor& text, const CvadLayerWeights& w) {
  if (input.rows() != z_tilde.rows() || input.cols() != z_tilde.cols()) {
    throw DimensionError("generation_mean: input and latent history differ in shape");
  }
  const Tensor query = input + z_tilde;
  const Tensor c = query + multi_head_attention(apply_layer_norm(query, w.gen_cross_norm), text, text, nullptr,
                                                w.gen_cross);
  return c + ffn(apply_layer_norm(c, w.gen_ffn_norm), w.gen_ffn);
}

Tensor kl_per_step(const GaussianDiag& q, const GaussianDiag& p) {
  const Tensor diff = q.mu - p.mu;
  const Tensor ratio = exp(q.log_var - p.log_var) + hadamard(square(diff), exp(-p.log_var));
  const Tensor half = Tensor::constant(Matrix::Constant(q.mu.rows(), q.mu.cols(), 0.5));
  return row_sum(0.5 * (p.log_var - q.log_var) + 0.5 * ratio - half);
}

Tensor reconstruction_loss(const Tensor& prediction, const Tensor& targets) {
  if (prediction.rows() != targets.rows()) {
    throw ContractError("reconstruction_loss: " + std::to_string(prediction.rows()) + " predicted steps for " +
                        std::to_string(targets.rows()) + " targets");
  }
  return mse(prediction, targets);
}

Tensor target_guided_loss(std::span<const LatentSequence> z_layers, const Tensor& targets,
                          std::span<const CvadLayerWeights> layers, const LinearWeights& projection) {
  if (z_layers.empty() || z_layers.size() != layers.size()) {
    throw ContractError("target_guided_loss: need one latent sequence per decoder layer");
  }
  Tensor guide;
  for (std::size_t i = 0; i < z_layers.size(); ++i) {
    const Tensor& z = z_layers[i].z;
    const Tensor shifted = shift_down(z, Tensor::constant(Matrix::Zero(1, z.cols())));
    const Tensor term = ffn(shifted, layers[i].guide_ffn);
    guide = guide.defined() ? guide + term : term;
  }
  return reconstruction_loss(linear(guide, projection), targets);
}

CvadLoss cvad_loss(std::span<const SampleTerms> batch) {
  if (batch.empty()) throw ContractError("cvad_loss: empty batch");
  Tensor rec;
  Tensor kl;
  for (const SampleTerms& s : batch) {
    if (s.posterior.size() != s.prior.size()) throw ContractError("cvad_loss: posterior/prior layer mismatch");
    const Tensor r = reconstruction_loss(s.prediction, s.targets);
    rec = rec.defined() ? rec + r : r;
    for (std::size_t l = 0; l < s.posterior.size(); ++l) {
      const Tensor k = sum(kl_per_step(s.posterior[l], s.prior[l]));
      kl = kl.defined() ? kl + k : k;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (!kl.defined()) kl = Tensor::constant(Matrix::Zero(1, 1));
  return {inv * rec, inv * kl};
}

Tensor total_loss(const CvadLoss& cvad, const Tensor& guide) {
  const Tensor base = cvad.rec + cvad.kl;
  return guide.defined() ? base + guide : base;
}

}  // namespace cteg
