#pragma once

// Differentiable primitives recorded on a Tape, plus plain tensor helpers.
// All softmax paths subtract the row maximum before exponentiating.

#include <span>

#include "rmt/tape.hpp"
#include "rmt/tensor.hpp"

namespace rmt {

// --- tape ops ---------------------------------------------------------------

Var matmul(Tape& tape, Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Tape& tape, Var a, Var b);  // [m x k] * [n x k]^T
Var add(Tape& tape, Var a, Var b);
Var add_bias(Tape& tape, Var x, Var bias);  // x[m x n] + bias[n] on every row
Var hadamard(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, double factor);
Var divide_by_scalar(Tape& tape, Var x, Var divisor);  // divisor has one element
Var sum(Tape& tape, Var x);

// Row-wise layer normalization with affine gamma/beta of width n.
Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps = 1e-5);
// Exact (erf) GELU.
Var gelu(Tape& tape, Var x);
// q, k, v: [batch*seq_len x width]. Per sample and head computes
// softmax(Q K^T / sqrt(width/heads)) V.
Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads, std::size_t seq_len);
// [batch*seq_len x width] -> [batch x width]
Var mean_pool(Tape& tape, Var x, std::size_t seq_len);
Var l2_normalize_rows(Tape& tape, Var x);

// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);
// Mean over the batch of KL(p_ref || softmax(logits)); p_ref is a constant.
Var kl_divergence(Tape& tape, const Tensor& p_ref, Var logits);

// --- plain tensor helpers ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& logits);
double cosine_similarity(const Tensor& f, const Tensor& g);
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
double kl_divergence(const Tensor& p_ref, const Tensor& logits);

}  // namespace rmt
