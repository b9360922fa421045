#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "focalforge/autodiff/tensor.hpp"

namespace focalforge::ad {

// Elementwise with NumPy-style broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var relu(const Var& x);
Var sigmoid(const Var& x);

// Sum / mean of every element, returned as shape [1].
Var sum(const Var& x);
Var mean(const Var& x);

// x[N,C,H,W] * w[K,C,kh,kw] (+ b[K]); zero padding. b may be undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0);

// [..., N, D] x [..., D, M] -> [..., N, M]; leading dims broadcast.
Var matmul(const Var& a, const Var& b);

// x[N, Din] * w[Dout, Din]^T + b[Dout]. b may be undefined.
Var affine(const Var& x, const Var& w, const Var& b);

// [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);

// Bilinear resampling, half-pixel centers, border clamp.
Var bilinear_resize(const Var& x, std::int64_t height, std::int64_t width);

// Samples x[N,C,H,W] at the bilinearly mapped position of every output pixel
// of flow[N,2,H',W'] plus the (dx, dy) offset stored in flow, in input pixels.
// Coordinates are clamped to the border. Differentiable in x and flow.
Var grid_sample_flow(const Var& x, const Var& flow);

Var concat(const std::vector<Var>& xs, int axis);
Var reshape(const Var& x, Shape shape);  // one -1 allowed
Var permute(const Var& x, const std::vector<int>& perm);

// Replicate padding / cropping on the last two dimensions.
Var pad_replicate(const Var& x, int top, int bottom, int left, int right);
Var crop(const Var& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width);

// Mean cross-entropy of logits[N,C,H,W] against labels (N*H*W ids), skipping
// ignore_value pixels and normalizing by the number of valid ones.
Var softmax_cross_entropy(const Var& logits, std::span<const std::uint8_t> labels, int ignore_value = 255);

// Mean absolute error over all elements.
Var l1_loss(const Var& pred, const Tensor& target);

// Forward-only helpers used outside the graph.
Tensor bilinear_resize(const Tensor& x, std::int64_t height, std::int64_t width);
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace focalforge::ad
