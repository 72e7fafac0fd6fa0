#include "cteg/transformer.hpp"

#include "cteg/errors.hpp"

#include <cmath>

namespace cteg {

AttentionWeights make_attention(ParameterStore& store, const std::string& prefix, Index d_model, Index heads,
                                Initializer& init) {
  if (heads < 1 || d_model % heads != 0) {
    throw ContractError("attention '" + prefix + "': d_model " + std::to_string(d_model) +
                        " is not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionWeights w;
  w.heads = heads;
  w.wq = store.add(prefix + ".wq", init.xavier(d_model, d_model));
  w.wk = store.add(prefix + ".wk", init.xavier(d_model, d_model));
  w.wv = store.add(prefix + ".wv", init.xavier(d_model, d_model));
  w.wo = store.add(prefix + ".wo", init.xavier(d_model, d_model));
  return w;
}

FFNWeights make_ffn(ParameterStore& store, const std::string& prefix, Index d_model, Index d_ff,
                    Initializer& init) {
  FFNWeights w;
  w.w1 = store.add(prefix + ".w1", init.xavier(d_model, d_ff));
  w.b1 = store.add(prefix + ".b1", init.zeros(1, d_ff));
  w.w2 = store.add(prefix + ".w2", init.xavier(d_ff, d_model));
  w.b2 = store.add(prefix + ".b2", init.zeros(1, d_model));
  return w;
}

LayerNormWeights make_layer_norm(ParameterStore& store, const std::string& prefix, Index d, Initializer& init) {
  return {store.add(prefix + ".gain", init.ones(1, d)), store.add(prefix + ".bias", init.zeros(1, d))};
}

LinearWeights make_linear(ParameterStore& store, const std::string& prefix, Index in, Index out,
                          Initializer& init) {
  return {store.add(prefix + ".w", init.xavier(in, out)), store.add(prefix + ".b", init.zeros(1, out))};
}

Tensor linear(const Tensor& x, const LinearWeights& w) { return add_row(matmul(x, w.w), w.b); }

Tensor apply_layer_norm(const Tensor& x, const LayerNormWeights& w) { return layer_norm(x, w.gain, w.bias); }

namespace {

void check_attention_inputs(const Tensor& q_in, const Tensor& k_in, const AttentionWeights& w) {
  const Index d = w.d_model();
  if (q_in.cols() != d || k_in.cols() != d) {
    throw DimensionError("attention: inputs have width " + std::to_string(q_in.cols()) + "/" +
                         std::to_string(k_in.cols()) + ", weights expect " + std::to_string(d));
  }
}

}  // namespace

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const Mask* mask,
                            const AttentionWeights& w) {
  check_attention_inputs(q_in, k_in, w);
  if (v_in.rows() != k_in.rows()) throw DimensionError("attention: keys and values differ in length");
  if (mask && (mask->rows() != q_in.rows() || mask->cols() != k_in.rows())) {
    throw DimensionError("attention: mask is " + std::to_string(mask->rows()) + "x" +
                         std::to_string(mask->cols()) + ", expected " + std::to_string(q_in.rows()) + "x" +
                         std::to_string(k_in.rows()));
  }
  const Index dh = w.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(q_in, w.wq);
  const Tensor k = matmul(k_in, w.wk);
  const Tensor v = matmul(v_in, w.wv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(w.heads));
  for (Index h = 0; h < w.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, dh);
    const Tensor kh = slice_cols(k, h * dh, dh);
    const Tensor vh = slice_cols(v, h * dh, dh);
    const Tensor p = softmax_rows(scale * grouped_matmul_nt(qh, kh, 1), mask);
    heads.push_back(matmul(p, vh));
  }
  const Tensor merged = w.heads == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, w.wo);
}

std::vector<Matrix> attention_probabilities(const Tensor& q_in, const Tensor& k_in, const Mask* mask,
                                            const AttentionWeights& w) {
  check_attention_inputs(q_in, k_in, w);
  NoGradGuard guard;
  const Index dh = w.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(q_in, w.wq);
  const Tensor k = matmul(k_in, w.wk);
  std::vector<Matrix> out;
  for (Index h = 0; h < w.heads; ++h) {
    out.push_back(
        softmax_rows(scale * grouped_matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), 1), mask)
            .value());
  }
  return out;
}

Tensor grouped_attention(const Tensor& q_in, const Tensor& kv_in, Index groups, const AttentionWeights& w) {
  check_attention_inputs(q_in, kv_in, w);
  const Index dh = w.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = matmul(q_in, w.wq);
  const Tensor k = matmul(kv_in, w.wk);
  const Tensor v = matmul(kv_in, w.wv);
  std::vector<Tensor> heads;
  for (Index h = 0; h < w.heads; ++h) {
    const Tensor p =
        softmax_rows(scale * grouped_matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), groups));
    heads.push_back(grouped_matmul_nn(p, slice_cols(v, h * dh, dh), groups));
  }
  const Tensor merged = w.heads == 1 ? heads.front() : concat_cols(heads);
  return matmul(merged, w.wo);
}

Mask causal_mask(Index steps, bool include_self) {
  if (steps < 1) throw ContractError("causal_mask: length must be >= 1");
  Mask m = Mask::Constant(steps, steps, false);
  for (Index r = 0; r < steps; ++r) {
    const Index last = include_self ? r : r - 1;
    for (Index c = 0; c <= last; ++c) m(r, c) = true;
  }
  if (!include_self) m(0, 0) = true;
  return m;
}

Matrix sinusoidal_pe(Index steps, Index d) {
  if (d % 2 != 0) throw ContractError("sinusoidal_pe: model width " + std::to_string(d) + " is odd");
  Matrix pe(steps, d);
  for (Index pos = 0; pos < steps; ++pos) {
    for (Index i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor ffn(const Tensor& x, const FFNWeights& w) {
  Tensor hidden = add_row(matmul(x, w.w1), w.b1);
  if (w.activation == Activation::gelu) hidden = gelu(hidden);
  return add_row(matmul(hidden, w.w2), w.b2);
}

}  // namespace cteg
