#include "loopformer/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace loopformer {

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask,
                            double logit_scale, double attn_dropout, bool training, Rng* rng) {
  if (q.dim(q.rank() - 1) != k.dim(k.rank() - 1)) {
    throw std::invalid_argument("attention: query/key width mismatch: " + shape_str(q.shape()) +
                                " vs " + shape_str(k.shape()));
  }
  Tensor logits = matmul(q, transpose_last2(k));
  if (logit_scale != 1.0) logits = scale(logits, logit_scale);
  if (mask.valid()) logits = add(logits, mask);
  Tensor weights = softmax(logits, -1);
  weights = dropout(weights, attn_dropout, training, rng);
  return matmul(weights, v);
}

namespace {

// [B, S, D] -> [B, H, S, D/H]
Tensor split_heads(const Tensor& x, int heads) {
  const int b = x.dim(0), s = x.dim(1), d = x.dim(2);
  Tensor r = reshape(x, {b, s, heads, d / heads});
  return transpose(r, {0, 2, 1, 3});
}

// [B, H, S, D/H] -> [B, S, D]
Tensor merge_heads(const Tensor& x) {
  const int b = x.dim(0), h = x.dim(1), s = x.dim(2), dk = x.dim(3);
  return reshape(transpose(x, {0, 2, 1, 3}), {b, s, h * dk});
}

}  // namespace

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            const Tensor& mask, const ForwardCtx& ctx) {
  if (x_q.rank() != 3 || x_kv.rank() != 3) {
    throw std::invalid_argument("multi_head_attention: inputs must be [B,S,D], got " +
                                shape_str(x_q.shape()) + " and " + shape_str(x_kv.shape()));
  }
  const int d_model = x_q.dim(2);
  if (ctx.heads < 1 || d_model % ctx.heads != 0) {
    throw std::invalid_argument("multi_head_attention: " + std::to_string(ctx.heads) +
                                " heads do not divide d_model=" + std::to_string(d_model));
  }
  const int d_head = d_model / ctx.heads;
  const double logit_scale = ctx.attn_scale == AttnScale::InvSqrtHeadDim
                                 ? 1.0 / std::sqrt(static_cast<double>(d_head))
                                 : 1.0 / std::sqrt(static_cast<double>(d_model));

  Tensor q = split_heads(matmul(x_q, w.wq), ctx.heads);
  Tensor k = split_heads(matmul(x_kv, w.wk), ctx.heads);
  Tensor v = split_heads(matmul(x_kv, w.wv), ctx.heads);
  Tensor o = scaled_dot_attention(q, k, v, mask, logit_scale, ctx.dropout, ctx.training, ctx.rng);
  return matmul(merge_heads(o), w.wo);
}

Tensor ffn(const Tensor& x, const FfnWeights& w) {
  return add(matmul(relu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

namespace {

Tensor residual_sublayer(const Tensor& x, const Tensor& sublayer_out, const ForwardCtx& ctx) {
  return add(x, dropout(sublayer_out, ctx.dropout, ctx.training, ctx.rng));
}

}  // namespace

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, const Tensor& self_mask,
                     const ForwardCtx& ctx) {
  Tensor normed = layer_norm(x, w.ln_attn.gain, w.ln_attn.bias);
  Tensor y = residual_sublayer(x, multi_head_attention(normed, normed, w.attn, self_mask, ctx), ctx);
  Tensor normed2 = layer_norm(y, w.ln_ffn.gain, w.ln_ffn.bias);
  return residual_sublayer(y, ffn(normed2, w.ffn), ctx);
}

Tensor decoder_layer(const Tensor& y, const Tensor& enc_out, const DecoderLayerWeights& w,
                     const Tensor& self_mask, const Tensor& cross_mask, const ForwardCtx& ctx) {
  Tensor n1 = layer_norm(y, w.ln_self.gain, w.ln_self.bias);
  Tensor a = residual_sublayer(y, multi_head_attention(n1, n1, w.self_attn, self_mask, ctx), ctx);
  Tensor n2 = layer_norm(a, w.ln_cross.gain, w.ln_cross.bias);
  Tensor c = residual_sublayer(a, multi_head_attention(n2, enc_out, w.cross_attn, cross_mask, ctx), ctx);
  Tensor n3 = layer_norm(c, w.ln_ffn.gain, w.ln_ffn.bias);
  return residual_sublayer(c, ffn(n3, w.ffn), ctx);
}

Tensor positional_encoding(int seq_len, int d_model) {
  Tensor pe = Tensor::zeros({seq_len, d_model});
  auto& d = pe.data();
  for (int pos = 0; pos < seq_len; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      d[static_cast<size_t>(pos * d_model + i)] = std::sin(angle);
      if (i + 1 < d_model) d[static_cast<size_t>(pos * d_model + i + 1)] = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace loopformer
