#include "cteg/runtime.hpp"

#include "cteg/binary_io.hpp"
#include "cteg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cteg {

double lr_at(long step, int d_model, int warmup) {
  if (step < 1) throw ContractError("lr_at: step must be >= 1, got " + std::to_string(step));
  if (d_model < 1 || warmup < 1) throw ContractError("lr_at: d_model and warmup must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// ---------------------------------------------------------------------------
// Adam

void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long t, double lr,
                 const AdamOptions& o) {
  m = o.beta1 * m + (1.0 - o.beta1) * grad;
  v = o.beta2 * v + (1.0 - o.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + o.eps);
}

void adam_step(std::span<const NamedTensor> params, AdamState& state, double lr, double grad_scale,
               const AdamOptions& options) {
  if (state.m.empty()) {
    for (const NamedTensor& p : params) {
      state.m.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
      state.v.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    const Matrix g = grad_scale == 1.0 ? t.grad() : Matrix(grad_scale * t.grad());
    adam_update(t.leaf_value(), g, state.m[i], state.v[i], state.step, lr, options);
  }
}

double grad_norm(std::span<const NamedTensor> params) {
  double total = 0.0;
  for (const NamedTensor& p : params) total += p.tensor.grad().squaredNorm();
  return std::sqrt(total);
}

// ---------------------------------------------------------------------------
// checkpoints

Checkpoint make_checkpoint(const Model& model, bool exact_weights) {
  Checkpoint ckpt;
  ckpt.version = kCheckpointVersion;
  ckpt.config = model.config();
  std::vector<Matrix> master;
  for (const NamedTensor& p : model.parameters().all()) {
    ckpt.tensors.emplace_back(p.name, p.tensor.value().cast<float>());
    master.push_back(p.tensor.value());
  }
  ckpt.tensors.emplace_back(kAverageTensorName, Matrix(model.average_expression()).cast<float>());
  master.push_back(Matrix(model.average_expression()));
  if (exact_weights) ckpt.master = std::move(master);
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.config);
  if (ckpt.master && ckpt.master->size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint: master weights do not match the tensor list");
  }
  std::map<std::string, Matrix> by_name;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    by_name[ckpt.tensors[i].first] = ckpt.master ? (*ckpt.master)[i] : Matrix(ckpt.tensors[i].second.cast<double>());
  }
  std::size_t used = 0;
  for (const NamedTensor& p : model.parameters().all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor '" + p.name + "'");
    if (it->second.rows() != p.tensor.rows() || it->second.cols() != p.tensor.cols()) {
      throw FormatError("checkpoint: tensor '" + p.name + "' has the wrong shape");
    }
    Tensor t = p.tensor;
    t.leaf_value() = it->second;
    ++used;
  }
  auto avg = by_name.find(kAverageTensorName);
  if (avg == by_name.end()) throw FormatError("checkpoint: missing average expression");
  if (avg->second.size() != kExpressionDim) throw FormatError("checkpoint: average expression must have 53 values");
  model.set_average_expression(avg->second.row(0));
  ++used;
  if (used != ckpt.tensors.size()) throw FormatError("checkpoint: contains tensors the configuration does not use");
  return model;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  binary::Writer w;
  w.bytes("CTEG");
  w.u32(ckpt.version);
  const std::string config = to_json(ckpt.config).dump();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.bytes(config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, data] : ckpt.tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(2);
    w.u32(static_cast<std::uint32_t>(data.rows()));
    w.u32(static_cast<std::uint32_t>(data.cols()));
    for (Index i = 0; i < data.size(); ++i) w.f32(data.data()[i]);
  }
  if (ckpt.master) {
    if (ckpt.master->size() != ckpt.tensors.size()) throw ContractError("checkpoint: master weights misaligned");
    binary::Writer s;
    for (std::size_t i = 0; i < ckpt.master->size(); ++i) {
      const Matrix& m = (*ckpt.master)[i];
      if (m.rows() != ckpt.tensors[i].second.rows() || m.cols() != ckpt.tensors[i].second.cols()) {
        throw ContractError("checkpoint: master copy of '" + ckpt.tensors[i].first + "' has the wrong shape");
      }
      for (Index k = 0; k < m.size(); ++k) s.f64(m.data()[k]);
    }
    w.bytes("MW64");
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(s.data());
  }
  if (ckpt.optimizer) {
    binary::Writer s;
    s.u64(static_cast<std::uint64_t>(ckpt.optimizer->step));
    s.u32(static_cast<std::uint32_t>(ckpt.optimizer->m.size()));
    for (std::size_t i = 0; i < ckpt.optimizer->m.size(); ++i) {
      const Matrix& m = ckpt.optimizer->m[i];
      const Matrix& v = ckpt.optimizer->v[i];
      s.u32(static_cast<std::uint32_t>(m.rows()));
      s.u32(static_cast<std::uint32_t>(m.cols()));
      for (Index k = 0; k < m.size(); ++k) s.f64(m.data()[k]);
      for (Index k = 0; k < v.size(); ++k) s.f64(v.data()[k]);
    }
    w.bytes("OPTM");
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(s.data());
  }
  if (ckpt.cursor || ckpt.rng_state) {
    binary::Writer s;
    const TrainCursor c = ckpt.cursor.value_or(TrainCursor{});
    s.u64(static_cast<std::uint64_t>(c.step));
    s.u32(static_cast<std::uint32_t>(c.epoch));
    s.u32(static_cast<std::uint32_t>(c.batch));
    const std::string rng = ckpt.rng_state.value_or("");
    s.u32(static_cast<std::uint32_t>(rng.size()));
    s.bytes(rng);
    w.bytes("RNGS");
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.bytes(s.data());
  }
  return w.data();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes, "checkpoint");
  Checkpoint ckpt;
  if (r.bytes(4) != "CTEG") throw FormatError("checkpoint: bad magic", 0);
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version), 4);
  }
  const auto config_len = r.u32();
  const std::string_view config_text = r.bytes(config_len);
  try {
    ckpt.config = config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("malformed configuration: ") + e.what());
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid configuration: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u16();
    std::string name(r.bytes(name_len));
    const auto rank = r.u8();
    if (rank != 2) r.fail("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    const std::uint64_t rows = r.u32();
    const std::uint64_t cols = r.u32();
    r.require(rows * cols * 4, "tensor data");
    MatrixX<float> data(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index k = 0; k < data.size(); ++k) data.data()[k] = r.f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(data));
  }
  while (!r.done()) {
    const std::string tag(r.bytes(4));
    const auto len = r.u32();
    binary::Reader s(r.bytes(len), "checkpoint section " + tag);
    if (tag == "MW64") {
      std::vector<Matrix> master;
      for (const auto& [name, data] : ckpt.tensors) {
        Matrix m(data.rows(), data.cols());
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = s.f64();
        master.push_back(std::move(m));
      }
      ckpt.master = std::move(master);
    } else if (tag == "OPTM") {
      AdamState state;
      state.step = static_cast<long>(s.u64());
      const auto n = s.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        const auto rows = s.u32();
        const auto cols = s.u32();
        Matrix m(rows, cols), v(rows, cols);
        for (Index k = 0; k < m.size(); ++k) m.data()[k] = s.f64();
        for (Index k = 0; k < v.size(); ++k) v.data()[k] = s.f64();
        state.m.push_back(std::move(m));
        state.v.push_back(std::move(v));
      }
      ckpt.optimizer = std::move(state);
    } else if (tag == "RNGS") {
      TrainCursor c;
      c.step = static_cast<long>(s.u64());
      c.epoch = static_cast<int>(s.u32());
      c.batch = static_cast<int>(s.u32());
      const auto n = s.u32();
      ckpt.cursor = c;
      ckpt.rng_state = std::string(s.bytes(n));
    } else {
      r.fail("unknown section tag '" + tag + "'");
    }
    if (!s.done()) s.fail("trailing bytes inside section");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  binary::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(binary::read_file(path)); }

// ---------------------------------------------------------------------------
// training

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, int batch_size, std::uint64_t seed,
                                                    int epoch) {
  RngStream rng = RngStream(seed).split(0xBA7C4000ULL + static_cast<std::uint64_t>(epoch));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].frames.rows() < dataset[b].frames.rows();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[rng.below(i)]);
  return batches;
}

namespace {

double mean_total_loss(const Model& model, const std::vector<PreparedSample>& samples, const Dataset& data,
                       std::uint64_t seed) {
  NoGradGuard guard;
  RngStream rng = RngStream(seed).split(0xE7A1ULL);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += model.teacher_forced_forward(samples[i], data[i].text_embedding, rng).total.item();
  }
  return total / static_cast<double>(samples.size());
}

std::vector<PreparedSample> prepare_all(const Dataset& data, const Model& model) {
  std::vector<PreparedSample> out;
  out.reserve(data.size());
  for (const TrainingExample& e : data) {
    if (e.text_embedding.cols() != model.config().d_model) {
      throw ContractError("train: embedding of '" + e.id + "' has width " + std::to_string(e.text_embedding.cols()));
    }
    out.push_back(prepare_targets(e.frames, model.average_expression(), model.config().msl));
  }
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw ContractError("train: dataset is empty");

  Model model = options.resume ? model_from_checkpoint(*options.resume) : Model(config);
  if (!options.resume) model.set_average_expression(average_expression(dataset));
  const ModelConfig& cfg = model.config();
  const auto& params = model.parameters().all();

  AdamState adam;
  TrainCursor cursor;
  if (options.resume) {
    if (options.resume->optimizer) adam = *options.resume->optimizer;
    if (options.resume->cursor) cursor = *options.resume->cursor;
  }

  const std::vector<PreparedSample> samples = prepare_all(dataset, model);
  std::vector<PreparedSample> valid_samples;
  if (options.validation && !options.validation->empty()) valid_samples = prepare_all(*options.validation, model);

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  bool stopped = false;
  const RngStream base(cfg.seed);

  for (int epoch = cursor.epoch; epoch < cfg.epochs && !stopped; ++epoch) {
    const auto batches = epoch_batches(dataset, cfg.batch_size, cfg.seed, epoch);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    const int first = epoch == cursor.epoch ? cursor.batch : 0;
    for (int b = first; b < static_cast<int>(batches.size()); ++b) {
      if (options.max_steps >= 0 && cursor.step >= options.max_steps) {
        cursor.epoch = epoch;
        cursor.batch = b;
        stopped = true;
        break;
      }
      const long step = cursor.step + 1;
      RngStream rng = base.split(static_cast<std::uint64_t>(step));
      const auto& batch = batches[static_cast<std::size_t>(b)];
      const double inv = 1.0 / static_cast<double>(batch.size());

      Tensor total, rec, kl, guide;
      double abs_z = 0.0;
      for (std::size_t idx : batch) {
        const ForwardResult r = model.teacher_forced_forward(samples[idx], dataset[idx].text_embedding, rng);
        total = total.defined() ? total + r.total : r.total;
        rec = rec.defined() ? rec + r.rec : r.rec;
        kl = kl.defined() ? kl + r.kl : r.kl;
        guide = guide.defined() ? guide + r.guide : r.guide;
        abs_z += r.diagnostics.mean_abs_z;
      }
      total = inv * total;

      TrainLogEntry entry;
      entry.step = step;
      entry.epoch = epoch;
      entry.rec = inv * rec.item();
      entry.kl = inv * kl.item();
      entry.guide = inv * guide.item();
      entry.total = total.item();
      entry.mean_abs_z = inv * abs_z;
      if (!std::isfinite(entry.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step << " (epoch " << epoch << ", batch ids";
        for (std::size_t idx : batch) os << ' ' << dataset[idx].id;
        os << "): L_rec=" << entry.rec << " L_KL=" << entry.kl << " L_g=" << entry.guide;
        throw DivergenceError(os.str());
      }

      backward(total);
      entry.grad_norm = grad_norm(params);
      const double scale =
          (cfg.clip_norm > 0.0 && entry.grad_norm > cfg.clip_norm) ? cfg.clip_norm / entry.grad_norm : 1.0;
      entry.lr = cfg.lr_scale * lr_at(step, cfg.d_model, cfg.warmup);
      adam_step(params, adam, entry.lr, scale);

      cursor.step = step;
      cursor.epoch = epoch;
      cursor.batch = b + 1;
      epoch_sum += entry.total;
      ++epoch_steps;
      result.log.push_back(entry);
      if (options.on_step) options.on_step(entry);
    }
    if (stopped) break;
    cursor.epoch = epoch + 1;
    cursor.batch = 0;
    if (epoch_steps > 0) result.epoch_total.push_back(epoch_sum / epoch_steps);

    const double score = valid_samples.empty() ? (epoch_steps > 0 ? epoch_sum / epoch_steps : best)
                                               : mean_total_loss(model, valid_samples, *options.validation, cfg.seed);
    if (score < best || !have_best) {
      best = score;
      have_best = true;
      result.best_checkpoint = make_checkpoint(model);
    }
  }

  result.final_checkpoint = make_checkpoint(model);
  result.final_checkpoint.optimizer = adam;
  result.final_checkpoint.cursor = cursor;
  result.final_checkpoint.rng_state = base.state();
  if (!have_best) result.best_checkpoint = make_checkpoint(model);
  return result;
}

// ---------------------------------------------------------------------------
// decoding

std::string to_string(StopReason reason) { return reason == StopReason::threshold ? "threshold" : "msl"; }

DecodeResult decode(const Model& model, const Matrix& text_embedding, RngStream& rng, const DecodeOptions& options) {
  const ModelConfig& cfg = model.config();
  const int msl = options.msl.value_or(cfg.msl);
  const double threshold = options.threshold.value_or(cfg.stop_threshold);
  if (msl < 0) throw ContractError("decode: MSL must be non-negative");
  if (text_embedding.rows() < 1 || text_embedding.cols() != cfg.d_model) {
    throw ContractError("decode: text embedding must be L x d_model with L >= 1");
  }
  NoGradGuard guard;
  const ModelWeights& w = model.weights();
  const Tensor text = Tensor::constant(text_embedding);
  const LtaKind kind = lta_kind(cfg);
  const Index d = cfg.d_model;
  const std::size_t layers = w.layers.size();

  std::vector<Matrix> z_history(layers, Matrix(0, d));
  std::vector<Matrix> input_noise(layers, Matrix(0, d));
  std::vector<RowVector> generated;
  DecodeResult result;
  result.reason = StopReason::msl;

  for (int t = 0; t < msl; ++t) {
    const Index steps = t + 1;
    Matrix inputs(steps, kExpressionDim);
    Matrix history(steps, kExpressionDim);
    inputs.row(0) = model.average_expression();
    for (Index i = 0; i < t; ++i) {
      inputs.row(i + 1) = generated[static_cast<std::size_t>(i)];
      history.row(i) = generated[static_cast<std::size_t>(i)];
    }
    history.row(t).setZero();  // placeholder, dropped by the shifted view

    Tensor layer_input = embed_sequence(Tensor::constant(inputs), w.embedder);
    const Tensor embedded_history = embed_sequence(Tensor::constant(history), w.embedder);
    Tensor mu_g;
    for (std::size_t m = 0; m < layers; ++m) {
      const CvadLayerWeights& lw = w.layers[m];
      const GaussianDiag prior = prior_params(trunk(embedded_history, text, true, lw), lw);
      const RowVector eps = rng.normal_matrix(1, d).row(0);
      RowVector z_t = prior.mu.value().row(t) +
                      (0.5 * prior.log_var.value().row(t).array()).exp().matrix().cwiseProduct(eps);
      z_history[m].conservativeResize(steps, Eigen::NoChange);
      z_history[m].row(t) = z_t;
      mu_g = generation_mean(layer_input, lta(Tensor::constant(z_history[m]), lw, kind), text, lw);
      if (m + 1 < layers) {
        input_noise[m].conservativeResize(steps, Eigen::NoChange);
        input_noise[m].row(t) = rng.normal_matrix(1, d).row(0);
        layer_input = mu_g + Tensor::constant(input_noise[m]);
      }
    }
    RowVector frame = project_out(mu_g, w, cfg.share_projection).value().row(t);
    if (cfg.sample_reconstruction) frame += rng.normal_matrix(1, kExpressionDim).row(0);
    if (distance_to_standard(frame) < threshold) {
      result.reason = StopReason::threshold;
      break;
    }
    generated.push_back(frame);
  }
  result.frames.resize(static_cast<Index>(generated.size()), kExpressionDim);
  for (std::size_t i = 0; i < generated.size(); ++i) result.frames.row(static_cast<Index>(i)) = generated[i];
  return result;
}

DecodeResult decode(std::string_view text, const Model& model, const TextEncoder& encoder, RngStream& rng,
                    const DecodeOptions& options) {
  if (tokenize(text).empty()) throw ContractError("decode: text is empty");
  return decode(model, encoder.encode(text), rng, options);
}

}  // namespace cteg
