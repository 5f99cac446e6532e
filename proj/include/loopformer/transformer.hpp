#pragma once

#include "loopformer/ops.hpp"
#include "loopformer/tensor.hpp"

namespace loopformer {

// Q/K/V and output projections, d_model x d_model each; the head split is a
// view into the concatenated per-head projections.
struct AttentionWeights {
  Tensor wq, wk, wv, wo;
};

struct FfnWeights {
  Tensor w1, b1, w2, b2;
};

struct NormWeights {
  Tensor gain, bias;
};

// Two sublayers: self-attention and position-wise FFN.
struct EncoderLayerWeights {
  NormWeights ln_attn;
  AttentionWeights attn;
  NormWeights ln_ffn;
  FfnWeights ffn;
};

// Three sublayers: self-attention, cross-attention over the encoder output,
// position-wise FFN.
struct DecoderLayerWeights {
  NormWeights ln_self;
  AttentionWeights self_attn;
  NormWeights ln_cross;
  AttentionWeights cross_attn;
  NormWeights ln_ffn;
  FfnWeights ffn;
};

// Attention logit divisor: sqrt of the per-head width (the conventional
// choice) or sqrt of the full model width.
enum class AttnScale { InvSqrtHeadDim, InvSqrtModelDim };

struct ForwardCtx {
  int heads = 1;
  double dropout = 0.0;
  bool training = false;
  AttnScale attn_scale = AttnScale::InvSqrtHeadDim;
  Rng* rng = nullptr;
};

// softmax(Q K^T * scale + mask) V over the last two dims; mask (if valid) is
// an additive bias broadcastable to the logit shape. Dropout applies to the
// attention probabilities.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                            double scale, double attn_dropout, bool training, Rng* rng);

// x_q, x_kv: [B, S, d_model]. Projects, splits into ctx.heads heads, runs
// per-head scaled dot attention, concatenates and applies the output
// projection.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            const Tensor& mask, const ForwardCtx& ctx);

// max(0, x W1 + b1) W2 + b2
Tensor ffn(const Tensor& x, const FfnWeights& w);

// Pre-LN residual layers: each sublayer sees the normalized input and its
// (dropped-out) output is added back onto the raw stream.
Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, const Tensor& self_mask,
                     const ForwardCtx& ctx);
Tensor decoder_layer(const Tensor& y, const Tensor& enc_out, const DecoderLayerWeights& w,
                     const Tensor& self_mask, const Tensor& cross_mask, const ForwardCtx& ctx);

// Sinusoidal table [seq_len, d_model]: sin on even dims, cos on odd dims.
Tensor positional_encoding(int seq_len, int d_model);

}  // namespace loopformer
