#ifndef HPTK_OPS_HPP
#define HPTK_OPS_HPP

#include <vector>

#include "hptk/tensor.hpp"

namespace hptk {

// Dense ops over Tensor. Every function returns a fresh tensor and, when any
// input has requires_grad, records the op on the graph. Reductions accumulate
// sequentially in index order so repeated runs are bit-identical.

/// Standard matrix product a[m×k] · b[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
/// mat[L×C] + row vector vec[C] on every row. The only broadcast-style op
/// besides the SSM group fan-out.
Tensor add_row(const Tensor& mat, const Tensor& vec);

Tensor exp(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu_squared(const Tensor& a);

inline constexpr double kNormEps = 1e-6;

/// Scale-only norm over the last axis: y = x * gamma / sqrt(sum(x^2) + eps).
/// The denominator is a plain sum (no division by the axis length), so
/// removing channels that are identically zero leaves every kept output
/// unchanged; init_gamma_for_width() gives the scale that reproduces the
/// conventional mean-square normalization at a given width.
Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps = kNormEps);
double init_gamma_for_width(Index width);

/// Temperature softmax over the last axis, shift-by-max stable.
Tensor softmax_temp(const Tensor& logits, double tau);

/// Row-restricted softmax for causal attention: row t normalizes
/// scale*scores[t, 0..t] and zeroes the rest.
Tensor causal_softmax(const Tensor& scores, double scale);

/// Depthwise causal convolution: x[L×C], kernel[K×C], bias[C] -> [L×C].
/// kernel[K-1] multiplies the newest sample; positions before the sequence
/// start read zeros.
Tensor conv1d_causal(const Tensor& x, const Tensor& kernel, const Tensor& bias);

Tensor slice_cols(const Tensor& t, Index start, Index count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& t, std::vector<Index> shape);

/// Row lookup: table[V×d], ids -> [len(ids)×d]. Gradient scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids);

Tensor sum(const Tensor& t);

/// Mean next-token cross entropy: logits[L×V] vs target ids (length L).
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<Index>& targets);

/// Forward KL divergence KL(teacher || student) of tempered distributions,
/// averaged over rows. The teacher side is treated as a constant; gradients
/// flow to the student logits only.
Tensor kd_fkld(const Tensor& teacher_logits, const Tensor& student_logits, double tau);

}  // namespace hptk

#endif
