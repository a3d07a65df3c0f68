#pragma once

#include <set>
#include <vector>

#include "dabf/tensor.hpp"

namespace dabf {

// Elementwise arithmetic with right-aligned broadcasting (dims must match
// or be 1; missing leading dims broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise max; ties route the gradient to the first argument.
Tensor maximum(const Tensor& a, const Tensor& b);
/// Elementwise min; ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// clamp(x/6 + 1/2, 0, 1)
Tensor hard_sigmoid(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);
Tensor atan_t(const Tensor& x);
Tensor abs_t(const Tensor& x);
Tensor square(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Mean over `axes`; reduced axes are removed from the shape (a full
/// reduction yields a rank-0 scalar). Summation runs in row-major input
/// order, so results are bit-reproducible.
Tensor reduce_mean(const Tensor& x, const std::set<int>& axes);
Tensor reduce_sum(const Tensor& x, const std::set<int>& axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// input N×C×H×W, weight O×I×K×K, bias O (may be undefined for none).
/// Zero padding, square kernel/stride.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// input N×D, weight D×E, bias E.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// input C×H×W; window k, stride s, padding p (padded cells never win).
Tensor maxpool2d(const Tensor& input, int k, int stride, int padding);

/// input C×H×W, points P×2 holding fractional (y, x). Out-of-grid
/// neighbors contribute zero. Differentiable in both input values and
/// point coordinates. Output C×P.
Tensor bilinear_sample(const Tensor& input, const Tensor& points);

/// Nearest-neighbor rescale by exactly 2. Up replicates, down keeps the
/// top-left cell of each 2x2 block.
Tensor resize_up2(const Tensor& chw);
Tensor resize_down2(const Tensor& chw);
/// Chains x2 steps; target dims must differ from the source by a common
/// power-of-two factor.
Tensor resize_to(const Tensor& chw, int out_h, int out_w);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose2d(const Tensor& x);
/// Stacks equal-shape tensors along a new leading axis.
Tensor stack0(const std::vector<Tensor>& xs);
/// Concatenates along existing axis 0.
Tensor concat0(const std::vector<Tensor>& xs);
Tensor index_select0(const Tensor& x, int i);
Tensor slice1d(const Tensor& x, int offset, int len);
/// Single element by flat row-major index, as a rank-0 scalar.
Tensor index_flat(const Tensor& x, long long flat);

/// O = sum_i relu(w_i) / (eps + sum_j relu(w_j)) * I_i, one node.
/// Requires >= 2 inputs of identical shape; weights is a length-n vector.
Tensor fused_weighted_sum(const std::vector<Tensor>& inputs, const Tensor& weights,
                          double eps);

/// Numerically stable binary cross-entropy with logits; `targets` is a
/// plain value (no gradient path). Elementwise output.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

/// Value copy severed from the graph.
Tensor detach(const Tensor& x);

}  // namespace dabf
