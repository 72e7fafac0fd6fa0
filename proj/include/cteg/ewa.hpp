#pragma once

// Expression-wise attention: within one frame, the jaw coefficients attend
// over the above-jaw coefficients and the result is added back onto the jaw
// part. Frames are then embedded into model space with positional encoding.

#include "cteg/expression.hpp"
#include "cteg/transformer.hpp"

#include <optional>

namespace cteg {

struct EwaWeights {
  Index split = kDefaultJawSplit;
  Index d_attn = 0;
  // One token per coefficient: value * direction.row(k) + offset.row(k).
  Tensor face_direction, face_offset;
  Tensor jaw_direction, jaw_offset;
  AttentionWeights attention;  // jaw tokens query, face tokens key/value
  LinearWeights reduction;     // (jaw_width * d_attn) -> jaw_width

  Index jaw_width() const { return kExpressionDim - split; }
};

EwaWeights make_ewa(ParameterStore& store, const std::string& prefix, Index d_attn, Index heads, Index split,
                    Initializer& init);

/// Enhances every row of a (T x 53) frame matrix independently.
Tensor ewa_enhance(const Tensor& frames, const EwaWeights& w);
ExpressionFrame ewa_enhance(const ExpressionFrame& frame, const EwaWeights& w);

/// Frame-to-model-space embedding, optionally preceded by EwA.
struct ExpressionEmbedder {
  std::optional<EwaWeights> ewa;
  LinearWeights frame;  // 53 -> d_model
};

/// (T x 53) frames -> (T x d_model): enhance, embed, add sinusoidal PE.
Tensor embed_sequence(const Tensor& frames, const ExpressionEmbedder& w);

}  // namespace cteg
