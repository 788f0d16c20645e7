#pragma once

#include <memory>
#include <vector>

#include "vfiqa/tensor.h"

// Differentiable primitives. Every op records itself on the calling thread's
// tape when gradients are enabled and at least one input requires a gradient.
namespace vfiqa::ops {

// Elementwise, shapes must match exactly.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
// Exact (erf-based) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
// Gradient passes only where lo <= a <= hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// Reductions to a rank-0 scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Mean over every axis but the first: [B, ...] -> [B].
template <typename T> Tensor<T> mean_per_item(const Tensor<T>& a);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; backward scatter-adds.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape out_shape,
                 std::shared_ptr<const std::vector<int64_t>> index);
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<size_t>& order);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, int64_t start, int64_t length);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis);
// Rank-0 element `index` of a rank-1 tensor.
template <typename T> Tensor<T> select(const Tensor<T>& a, int64_t index);

// Cross-correlation. input [B,C,H,W], weight [O,C,k,k], bias [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding);

// x [..., in] * weight[out, in]^T + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

// Batched product: a [G,M,K] with b [G,K,N], or b [G,N,K] if transpose_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

// Softmax over the last axis.
template <typename T> Tensor<T> softmax(const Tensor<T>& a);

// For x [B,C,H,W]: each position's channel vector divided by (L2 norm + eps).
template <typename T>
Tensor<T> channel_normalize(const Tensor<T>& x, T eps = T(1e-10));

// LayerNorm of each position's channel vector of x [B,C,H,W] with affine
// gamma [C], beta [C].
template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                             const Tensor<T>& beta, T eps = T(1e-5));

}  // namespace vfiqa::ops
