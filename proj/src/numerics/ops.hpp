// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/autograd.hpp"
#include "numerics/tensor.hpp"

// Differentiable primitives. Every op checks shapes and throws ShapeError
// naming both operands; the only broadcast is `add_bias`.
namespace m2a::num {

// --- plain tensor kernels (no tape) ---------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor kron(const Tensor& c, const Tensor& d);
/// x · kron(c, d) without forming the Kronecker product.
Tensor kron_apply(const Tensor& c, const Tensor& d, const Tensor& x);
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// --- tape ops -------------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x[n×d] + bias[d], bias broadcast over rows.
Var add_bias(Var x, Var bias);
Var relu(Var x);
/// Exact (erf) GELU.
Var gelu(Var x);
/// Row-wise layer normalization with affine gamma/beta of shape [d].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Rows of `table` selected by `ids`.
Var embedding(Var table, std::span<const int> ids);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, std::span<const int> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Row softmax; with `causal`, entry (i, j > i) of a square input is masked.
Var softmax_rows(Var logits, bool causal = false);
Var log_softmax_rows(Var logits);
/// Mean over rows of -log softmax(logits)[row, target].
Var cross_entropy(Var logits, std::span<const int> targets);
/// Mean over rows of -sum_c y[row, c] * log softmax(logits)[row, c].
Var cross_entropy(Var logits, const Tensor& target_probs);
/// Mean over rows of KL(softmax(p_logits) || softmax(q_logits)); the first
/// argument is the reference distribution.
Var kl_divergence(Var p_logits, Var q_logits);
Var kron(Var c, Var d);
Var kron_apply(Var c, Var d, Var x);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::uint64_t seed);
/// Constant copy; blocks gradient flow.
Var detach(Var a);

}  // namespace m2a::num
