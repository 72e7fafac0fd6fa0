#include "cteg/model.hpp"

#include "cteg/errors.hpp"

#include <limits>

namespace cteg {

Tensor project_out(const Tensor& mu_g, const ModelWeights& w, bool share) {
  if (share) {
    const LinearWeights& embed = w.embedder.frame;
    return matmul(add_row(mu_g, -embed.b), transpose(embed.w));
  }
  if (!w.output) throw ContractError("project_out: model has no output projection");
  return linear(mu_g, *w.output);
}

Model::Model(ModelConfig config, bool zero_init)
    : config_(std::move(config)), average_(ExpressionFrame::Zero(kExpressionDim)) {
  config_.validate();
  RngStream rng(config_.seed);
  Initializer init(rng, zero_init);
  const Index d = config_.d_model;
  if (config_.use_ewa) {
    weights_.embedder.ewa = make_ewa(store_, "ewa", config_.effective_d_attn(), config_.effective_ewa_heads(),
                                     config_.jaw_split, init);
  }
  weights_.embedder.frame = make_linear(store_, "embed", kExpressionDim, d, init);
  for (int m = 0; m < config_.n_layers; ++m) {
    weights_.layers.push_back(make_cvad_layer(store_, "cvad." + std::to_string(m), config_, init));
  }
  if (config_.use_lg) weights_.guide_projection = make_linear(store_, "guide.proj", d, kExpressionDim, init);
  if (!config_.share_projection) weights_.output = make_linear(store_, "out", d, kExpressionDim, init);
}

void Model::set_average_expression(const ExpressionFrame& frame) {
  if (frame.size() != kExpressionDim || !frame.allFinite()) {
    throw ContractError("average expression must be 53 finite values");
  }
  average_ = frame;
}

void Model::copy_parameters_from(const Model& other) {
  const auto& src = other.parameters().all();
  const auto& dst = store_.all();
  if (src.size() != dst.size()) throw ContractError("copy_parameters_from: parameter layouts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.rows() != dst[i].tensor.rows() ||
        src[i].tensor.cols() != dst[i].tensor.cols())
      throw ContractError("copy_parameters_from: parameter layouts differ");
    Tensor t = dst[i].tensor;
    t.leaf_value() = src[i].tensor.value();
  }
  average_ = other.average_;
}

ForwardResult Model::teacher_forced_forward(const PreparedSample& sample, const Matrix& text,
                                            RngStream& rng) const {
  return run(sample, text, &rng, LatentPolicy::posterior_sample);
}

Matrix Model::predictive_means(const ExpressionSequence& frames, const Matrix& text) const {
  NoGradGuard guard;
  const PreparedSample sample = prepare_targets(frames, average_, std::numeric_limits<int>::max());
  const ForwardResult r = run(sample, text, nullptr, LatentPolicy::prior_mean);
  return r.terms.prediction.value().topRows(frames.rows());
}

ForwardResult Model::run(const PreparedSample& sample, const Matrix& text_matrix, RngStream* rng,
                         LatentPolicy policy) const {
  if (sample.inputs.rows() != sample.targets.rows() || sample.inputs.rows() < 1) {
    throw ContractError("forward: inputs and targets must be non-empty and of equal length");
  }
  if (text_matrix.rows() < 1 || text_matrix.cols() != config_.d_model) {
    throw ContractError("forward: text embedding must be L x d_model with L >= 1");
  }
  const Tensor text = Tensor::constant(text_matrix);
  const Tensor targets = Tensor::constant(sample.targets);
  const Tensor embedded_inputs = embed_sequence(Tensor::constant(sample.inputs), weights_.embedder);
  const Tensor embedded_targets = embed_sequence(targets, weights_.embedder);
  const LtaKind kind = lta_kind(config_);

  ForwardResult result;
  result.terms.targets = targets;
  const Index steps = sample.targets.rows();
  result.diagnostics.kl_per_step.assign(static_cast<std::size_t>(steps), 0.0);

  Tensor layer_input = embedded_inputs;
  Tensor mu_g;
  for (std::size_t m = 0; m < weights_.layers.size(); ++m) {
    const CvadLayerWeights& w = weights_.layers[m];
    const GaussianDiag q = posterior_params(trunk(embedded_targets, text, false, w), w);
    const GaussianDiag p = prior_params(trunk(embedded_targets, text, true, w), w);
    Tensor z;
    if (policy == LatentPolicy::posterior_sample) {
      z = reparameterize(q, *rng);
    } else {
      z = p.mu;
    }
    const Tensor z_tilde = lta(z, w, kind);
    mu_g = generation_mean(layer_input, z_tilde, text, w);
    if (m + 1 < weights_.layers.size()) {
      layer_input = rng ? mu_g + Tensor::constant(rng->normal_matrix(mu_g.rows(), mu_g.cols())) : mu_g;
    }

    const Tensor kl_steps = kl_per_step(q, p);
    LayerStats stats;
    for (Index t = 0; t < steps; ++t) result.diagnostics.kl_per_step[t] += kl_steps.value()(t, 0);
    stats.kl = kl_steps.value().sum();
    stats.mean_abs_z = z.value().cwiseAbs().mean();
    stats.posterior_std = (0.5 * q.log_var.value().array()).exp().mean();
    result.diagnostics.layers.push_back(stats);

    result.terms.posterior.push_back(q);
    result.terms.prior.push_back(p);
    result.latents.push_back({z, policy == LatentPolicy::posterior_sample ? LatentSource::posterior
                                                                            : LatentSource::prior});
  }

  Tensor prediction = project_out(mu_g, weights_, config_.share_projection);
  if (config_.sample_reconstruction && rng) {
    prediction = prediction + Tensor::constant(rng->normal_matrix(prediction.rows(), prediction.cols()));
  }
  result.terms.prediction = prediction;

  const SampleTerms single[] = {result.terms};
  const CvadLoss losses = cvad_loss(single);
  result.rec = losses.rec;
  result.kl = losses.kl;
  if (config_.use_lg) {
    result.guide = target_guided_loss(result.latents, targets, weights_.layers, *weights_.guide_projection);
  } else {
    result.guide = Tensor::constant(Matrix::Zero(1, 1));
  }
  result.total = total_loss(losses, result.guide);

  double abs_z = 0.0;
  for (const LayerStats& s : result.diagnostics.layers) abs_z += s.mean_abs_z;
  result.diagnostics.mean_abs_z = abs_z / static_cast<double>(result.diagnostics.layers.size());
  return result;
}

PreparedSample prepare_targets(const ExpressionSequence& frames, const ExpressionFrame& average, int msl) {
  validate_sequence(frames);
  if (frames.rows() < 1) throw ContractError("prepare_targets: sequence is empty");
  if (average.size() != kExpressionDim) throw ContractError("prepare_targets: average frame must have 53 values");
  Index steps = frames.rows();
  if (msl < 2 && steps >= msl) throw ContractError("prepare_targets: MSL must be >= 2 to hold a frame and terminator");
  if (steps >= msl) {
    warn("sequence of " + std::to_string(steps) + " frames truncated to " + std::to_string(msl - 1));
    steps = msl - 1;
  }
  PreparedSample s;
  s.inputs.resize(steps + 1, kExpressionDim);
  s.targets.resize(steps + 1, kExpressionDim);
  s.inputs.row(0) = average;
  s.inputs.bottomRows(steps) = frames.topRows(steps);
  s.targets.topRows(steps) = frames.topRows(steps);
  s.targets.row(steps).setZero();
  return s;
}

}  // namespace cteg
