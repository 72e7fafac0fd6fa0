#include "cteg/ewa.hpp"

#include "cteg/errors.hpp"

namespace cteg {

EwaWeights make_ewa(ParameterStore& store, const std::string& prefix, Index d_attn, Index heads, Index split,
                    Initializer& init) {
  if (split < 1 || split >= kExpressionDim) throw ContractError("EwA: split point out of range");
  EwaWeights w;
  w.split = split;
  w.d_attn = d_attn;
  const Index jaw = kExpressionDim - split;
  w.face_direction = store.add(prefix + ".face_direction", init.normal(split, d_attn, 1.0));
  w.face_offset = store.add(prefix + ".face_offset", init.normal(split, d_attn, 1.0));
  w.jaw_direction = store.add(prefix + ".jaw_direction", init.normal(jaw, d_attn, 1.0));
  w.jaw_offset = store.add(prefix + ".jaw_offset", init.normal(jaw, d_attn, 1.0));
  w.attention = make_attention(store, prefix + ".attn", d_attn, heads, init);
  w.reduction = make_linear(store, prefix + ".reduce", jaw * d_attn, jaw, init);
  return w;
}

Tensor ewa_enhance(const Tensor& frames, const EwaWeights& w) {
  if (frames.cols() != kExpressionDim) {
    throw DimensionError("ewa_enhance: frames have " + std::to_string(frames.cols()) + " columns, expected 53");
  }
  const Index steps = frames.rows();
  const Index jaw_width = w.jaw_width();
  const Tensor face = slice_cols(frames, 0, w.split);
  const Tensor jaw = slice_cols(frames, w.split, jaw_width);
  const Tensor face_tokens = coefficient_tokens(face, w.face_direction, w.face_offset);
  const Tensor jaw_tokens = coefficient_tokens(jaw, w.jaw_direction, w.jaw_offset);
  const Tensor attended = grouped_attention(jaw_tokens, face_tokens, steps, w.attention);
  const Tensor jaw_delta = linear(reshape(attended, steps, jaw_width * w.d_attn), w.reduction);
  const Tensor parts[] = {face, jaw + jaw_delta};
  return concat_cols(parts);
}

ExpressionFrame ewa_enhance(const ExpressionFrame& frame, const EwaWeights& w) {
  NoGradGuard guard;
  return ewa_enhance(Tensor::constant(Matrix(frame)), w).value().row(0);
}

Tensor embed_sequence(const Tensor& frames, const ExpressionEmbedder& w) {
  if (frames.rows() < 1) throw ContractError("embed_sequence: empty sequence");
  const Tensor enhanced = w.ewa ? ewa_enhance(frames, *w.ewa) : frames;
  const Tensor embedded = linear(enhanced, w.frame);
  return embedded + Tensor::constant(sinusoidal_pe(frames.rows(), embedded.cols()));
}

}  // namespace cteg
