#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "semalign/tensor.hpp"

namespace semalign {

/// Clamp floor applied wherever a log of a probability is taken.
inline constexpr double kLogEps = 1e-12;

// Elementwise / structural ops. Shapes must agree exactly unless noted;
// mismatches throw DimensionError naming both shapes.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// a * s + c
template <typename T> Tensor<T> affine(const Tensor<T>& a, T s, T c = T(0));
/// a / s
template <typename T> Tensor<T> div_scalar(const Tensor<T>& a, T s);
/// Row-broadcast bias: a is m x n, bias has n entries.
template <typename T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// m x n -> m
template <typename T> Tensor<T> row_sum(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
/// log(1 + exp(a)), overflow-safe.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
/// log(max(a, eps)); zero gradient where the clamp is active.
template <typename T> Tensor<T> log_clamped(const Tensor<T>& a, T eps = T(kLogEps));

/// Numerically stable softmax of a / temperature along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, int axis = -1, T temperature = T(1));

/// H(P, Q) = -sum_c P_c log max(Q_c, eps). Vectors give a scalar; m x C
/// matrices give one value per row.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& target, const Tensor<T>& pred);

/// Scales each row of an m x n matrix to unit L2 norm (eps under the root).
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps = T(1e-12));

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Stacks tensors along axis 0; trailing extents must agree.
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
/// Rows [begin, end) along axis 0.
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
/// out[i] = a[i, index[i]] for an m x n matrix.
template <typename T> Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index);

/// 2-D convolution, stride 1, zero padding `pad`.
/// x: N x C x H x W, weight: O x C x k x k, bias: O.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad);

/// 2x2 max pooling with stride 2 over N x C x H x W (H, W even).
template <typename T> Tensor<T> max_pool2(const Tensor<T>& x);

}  // namespace semalign
