#pragma once

#include <vector>

#include "devlbert/tensor.hpp"

namespace devlbert {

// Differentiable primitives. Every function here builds the backward tape and
// is covered by the finite-difference suite in tests/.

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// 2-d transpose.
Tensor transpose(const Tensor& x);

/// Elementwise sum of same-shape tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// [n x d] + [d], bias broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

Tensor sub(const Tensor& a, const Tensor& b);

/// Elementwise (Hadamard) product of same-shape tensors.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);

Tensor relu(const Tensor& x);

/// Exact GeLU, 0.5 x (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);

/// Max-subtracted softmax along `axis`; each line sums to 1.
Tensor softmax(const Tensor& x, int axis);

/// Normalization over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mean over rows of -sum_c target * log softmax(logits). Targets must be
/// per-row distributions (validated); computed in log-space.
Tensor cross_entropy_soft(const Tensor& logits, const Tensor& targets);

/// Mean sigmoid binary cross-entropy over elementwise (logit, label) pairs.
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels);

/// Select rows of a [n x d] tensor; duplicate ids accumulate gradient.
Tensor gather_rows(const Tensor& x, const std::vector<int>& ids);

/// gather_rows on an embedding table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

/// Concatenate along axis 0 (rows) or 1 (columns); 1-d tensors concatenate end to end.
Tensor concat(const Tensor& a, const Tensor& b, int axis);

/// Rows [begin, end) of a 2-d tensor.
Tensor slice_rows(const Tensor& x, int begin, int end);

/// Columns [begin, end) of a 2-d tensor.
Tensor slice_cols(const Tensor& x, int begin, int end);

/// Same buffer reinterpreted under a new shape of equal element count.
Tensor reshape(const Tensor& x, Shape new_shape);

/// Mean over one axis; the axis is dropped from the result shape.
Tensor mean_pool(const Tensor& x, int axis);

/// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& x);

/// Elementwise division by a scalar tensor (the denominator participates in the graph).
Tensor div_scalar(const Tensor& x, const Tensor& denom);

/// Values copied out of the graph; gradients stop here.
Tensor stop_gradient(const Tensor& x);

/// Constant [n x classes] one-hot rows.
Tensor one_hot(const std::vector<int>& ids, int classes);

}  // namespace devlbert
