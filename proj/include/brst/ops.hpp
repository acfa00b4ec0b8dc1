#pragma once

#include <functional>
#include <vector>

#include "brst/rng.hpp"
#include "brst/tape.hpp"

namespace brst {

// Differentiable primitives. Each computes its value eagerly; when a tape
// is active and an input requires grad, the result node is recorded with
// the adjoint closure. Reduction orders are fixed so repeated runs are
// bit-identical.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// rows of a (n x d) plus bias (d) or (1 x d)
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double c);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
// Inverted dropout; rate 0 is an exact identity. Mask drawn from rng.
Tensor dropout(const Tensor& a, double rate, Rng& rng);
// Row-wise (last axis) normalization to zero mean / unit variance, then
// elementwise affine by gain and bias (both sized to the last extent).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Log-softmax along `axis` with max-subtraction stabilization.
Tensor softmax_log(const Tensor& x, int axis);
// Row-wise probabilities (last axis of a 2-D array).
Tensor softmax_rows(const Tensor& x);
// Row-wise probabilities with entries excluded wherever allowed[r*cols+c]
// is false; excluded entries get probability exactly 0. Every row must
// keep at least one allowed entry.
Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& allowed);
Tensor slice_cols(const Tensor& a, int64_t start, int64_t width);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& a);
// -sum_i logprobs[i, ids[i]], optionally mixed with a uniform target
// distribution (label smoothing).
Tensor pick_nll(const Tensor& logprobs, const std::vector<int>& ids, double label_smoothing = 0.0);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
// 3x3 kernels, stride 2, zero padding 1. x is (C_in, T, F), weight is
// (C_out, C_in*9) with kernel taps flattened row-major, bias is (C_out).
// Output is (C_out, ceil(T/2), ceil(F/2)).
Tensor conv2d_s2(const Tensor& x, const Tensor& weight, const Tensor& bias);
// (C, T, F) -> (T, C*F), out[t, c*F + f] = x[c, t, f].
Tensor channels_to_rows(const Tensor& x);
Tensor reshape(const Tensor& a, std::vector<int64_t> new_shape);

// Max over parameters of |analytic - central difference| / max(1, |cd|).
// `build_loss` is evaluated under a fresh tape for the analytic side and
// value-only for the perturbed sides.
double finite_diff_check(const std::function<Tensor()>& build_loss, std::vector<Tensor> params, double h = 1e-6);

namespace detail {
// Shared helper for ops defined outside ops.cpp (e.g. the CTC loss).
Tensor make_op_node(Array value, const char* op, std::vector<Tensor> inputs, std::function<void(Node&)> backward);
}  // namespace detail

}  // namespace brst
