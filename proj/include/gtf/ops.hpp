#pragma once

#include <functional>
#include <vector>

#include "gtf/tensor.hpp"

namespace gtf {

// Differentiable forward primitives. Each op propagates requires_grad from
// its inputs and, when a tape is active and the output requires a gradient,
// records a pull closure for the reverse pass. Shape violations throw
// ShapeError with both shapes in the message.

/// (n x k) * (k x m) -> (n x m)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise; one operand may be a single-element tensor, which is
/// broadcast (its gradient is the reduced sum).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar c);

/// Inputs of equal rank, equal dims outside `axis`.
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// k vectors of width d -> (k x d)
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Same number of elements, new dims; contents unchanged.
Tensor reshape(const Tensor& a, Shape shape);
/// Rank 1: element gather; rank 2: row gather. Duplicate indices accumulate
/// in the backward scatter.
Tensor gather_rows(const Tensor& a, const std::vector<Index>& indices);
/// Row i of a rank-2 tensor, as a vector.
Tensor row(const Tensor& a, Index i);

Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
/// Max over `axis`; ties route the gradient to the first maximizer.
Tensor reduce_max(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);  // -> shape {1}

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);
Tensor leaky_relu(const Tensor& a, Scalar slope = 0.2);
Tensor relu(const Tensor& a);

/// Softmax over `axis`. Numerically shifted by the group max; every
/// normalized group sums to 1.
Tensor softmax(const Tensor& a, int axis);
/// Entries with mask 0 are excluded from normalization and output 0.
/// A fully masked group is rejected.
Tensor masked_softmax(const Tensor& a, const Tensor& mask, int axis);

/// Normalization over the last axis with learnable gain/bias of that width.
/// Epsilon sits inside the square root, so constant inputs map to bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  Scalar eps = 1e-5);

/// x W + b with b broadcast across rows; x may be a vector (treated as one row).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

/// Diagnostics hook: invoked with every (masked) softmax output and its axis.
/// Used by normalization audits; null by default.
using SoftmaxObserver = std::function<void(const Tensor& result, int axis)>;
void set_softmax_observer(SoftmaxObserver obs);

}  // namespace gtf
