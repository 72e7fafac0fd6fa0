#pragma once

// Attention, positional encoding and feed-forward blocks shared by the
// expression encoder and the decoder.

#include "cteg/params.hpp"
#include "cteg/tensor.hpp"

#include <string>
#include <vector>

namespace cteg {

/// Per-head projections stored side by side: columns [i*d_head, (i+1)*d_head)
/// of wq/wk/wv belong to head i. wo maps the concatenated heads back.
struct AttentionWeights {
  Tensor wq, wk, wv, wo;
  Index heads = 1;

  Index d_model() const { return wq.rows(); }
  Index d_head() const { return wq.cols() / heads; }
};

enum class Activation { gelu, identity };

struct FFNWeights {
  Tensor w1, b1, w2, b2;
  Activation activation = Activation::gelu;
};

struct LayerNormWeights {
  Tensor gain, bias;
};

struct LinearWeights {
  Tensor w, b;
};

AttentionWeights make_attention(ParameterStore& store, const std::string& prefix, Index d_model, Index heads,
                                Initializer& init);
FFNWeights make_ffn(ParameterStore& store, const std::string& prefix, Index d_model, Index d_ff,
                    Initializer& init);
LayerNormWeights make_layer_norm(ParameterStore& store, const std::string& prefix, Index d, Initializer& init);
LinearWeights make_linear(ParameterStore& store, const std::string& prefix, Index in, Index out,
                          Initializer& init);

Tensor linear(const Tensor& x, const LinearWeights& w);
Tensor apply_layer_norm(const Tensor& x, const LayerNormWeights& w);

/// Scaled dot-product attention over h heads with scale 1/sqrt(d_head).
/// mask(i, j) == true lets query i attend to key j. A query row with no
/// allowed key throws ContractError.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, const Mask* mask,
                            const AttentionWeights& w);

/// Per-head attention probabilities (Tq x Tk each), for inspection.
std::vector<Matrix> attention_probabilities(const Tensor& q_in, const Tensor& k_in, const Mask* mask,
                                            const AttentionWeights& w);

/// Independent attention inside each of `groups` blocks: q_in is
/// (G*m x d) and kv_in is (G*n x d); block g of queries sees only block g
/// of keys/values.
Tensor grouped_attention(const Tensor& q_in, const Tensor& kv_in, Index groups, const AttentionWeights& w);

/// include_self: row t allows columns 0..t. Otherwise strictly lower
/// triangular, except that row 0 keeps column 0 (the sentinel slot of a
/// right-shifted sequence) so no row is empty.
Mask causal_mask(Index steps, bool include_self);

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(...). d must be even.
Matrix sinusoidal_pe(Index steps, Index d);

Tensor ffn(const Tensor& x, const FFNWeights& w);

}  // namespace cteg
