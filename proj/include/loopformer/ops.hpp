#pragma once

#include <vector>

#include "loopformer/tensor.hpp"

namespace loopformer {

// Elementwise ops broadcast with the usual right-aligned rules; gradients of
// broadcast inputs are sum-reduced over the broadcast dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// Batched matrix product over the last two dims; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);

// Numerically stable softmax along `axis` (negative axes count from the end).
Tensor softmax(const Tensor& x, int axis);

// Normalization over the last axis with per-feature affine. Population
// variance, eps inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(const Tensor& x);

// Inverted dropout: kept units are scaled by 1/(1-p) during training; identity
// when training is off or p == 0. The sampled mask is kept on the tape so
// backward sees the identical mask.
Tensor dropout(const Tensor& x, double p, bool training, Rng* rng);

// table: [V, D]; returns id_shape + [D]. Gradients scatter into table rows.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, const Shape& id_shape);

// Mean over non-pad positions of the smoothed negative log-likelihood, with
// (1 - eps_ls) on the true class and eps_ls spread uniformly over the
// vocabulary. logits: [..., V] with one target id per leading position.
Tensor label_smoothed_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                    double eps_ls, int pad_id);

Tensor sum(const Tensor& x);

// Additive mask value for disallowed attention logits. Large negative rather
// than -inf so backward stays NaN-free.
constexpr double kMaskValue = -1e9;

}  // namespace loopformer
