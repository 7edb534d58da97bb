#pragma once

#include <vector>

#include "gbs/tensor.hpp"

// Differentiable primitives. Every op returns a fresh node; gradients flow
// only into inputs that require them. Shapes follow the conventions in
// tensor.hpp. Instantiated for float (training) and double (gradient checks).
namespace gbs::ad {

// Normalization floor for every L2 norm: ||v|| -> max(||v||, kNormEps).
inline constexpr double kNormEps = 1e-8;

template <typename T> Var<T> constant(Tensor<T> value);
template <typename T> Var<T> parameter(Tensor<T> value);

// Elementwise, equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> maximum(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, std::vector<int> shape);

// Reductions to a [1] scalar.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> mse(const Var<T>& a, const Tensor<T>& target);
// Largest of a list of scalars; the gradient routes to the first maximizer.
template <typename T> Var<T> max_of(const std::vector<Var<T>>& scalars);
// Packs scalars into a [k] vector.
template <typename T> Var<T> stack(const std::vector<Var<T>>& scalars);

// Spatial ops on [C, H, W].
// Same-padded stride-1 convolution; weight [O, C, k, k] with odd k; bias [O]
// or undefined.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T> Var<T> max_pool(const Var<T>& x, int stride);
template <typename T> Var<T> upsample_nearest(const Var<T>& x, int factor);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
// [C] -> [C, H, W], replicated at every pixel.
template <typename T> Var<T> tile(const Var<T>& v, int height, int width);

// Text path.
template <typename T> Var<T> gather_rows(const Var<T>& table, const std::vector<int>& rows);
// [s, n] x W[out, n]^T + b[out] -> [s, out].
template <typename T> Var<T> linear_rows(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
template <typename T> Var<T> mean_rows(const Var<T>& x);

// Dense linear algebra on rank-2 tensors.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> softmax_rows(const Var<T>& a);

// Feature/text similarity ops.
template <typename T> Var<T> normalize(const Var<T>& v);
// Per-pixel L2 normalization along channels.
template <typename T> Var<T> normalize_channels(const Var<T>& x);
// exp(-|x_hat - w_hat|) per channel and pixel; w_hat broadcast spatially.
template <typename T> Var<T> distance_gate(const Var<T>& x_hat, const Var<T>& w_hat);
// cos(x[:, p], w) per pixel -> [1, H, W]; zero vectors give 0.
template <typename T> Var<T> cosine_map(const Var<T>& x, const Var<T>& w);
// x[c, p] * m[0, p].
template <typename T> Var<T> scale_by_map(const Var<T>& x, const Var<T>& map);
// sum_p m[0, p] * x[:, p] -> [C].
template <typename T> Var<T> weighted_pixel_sum(const Var<T>& x, const Var<T>& map);
// Cosine of two vectors -> [1]; zero vectors give 0.
template <typename T> Var<T> cosine(const Var<T>& a, const Var<T>& b);

// Mean row-wise plus mean column-wise cross-entropy of softmax(t * Z) with
// the diagonal as target; natural log.
template <typename T> Var<T> symmetric_cross_entropy(const Var<T>& z, T temperature);

}  // namespace gbs::ad
