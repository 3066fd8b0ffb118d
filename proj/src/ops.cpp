#include "semalign/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "semalign/errors.hpp"

namespace semalign {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
    if (a.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(a.shape()));
    }
}

template <typename T>
using Node = TensorNode<T>;

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& in = self.inputs[k];
            if (!in->requires_grad) continue;
            auto& g = in->grad_buffer();
            const T sign = k == 0 ? T(1) : T(-1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_op<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            auto& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& a, T s, T c) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s + c;
    return make_op<T>(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

template <typename T>
Tensor<T> div_scalar(const Tensor<T>& a, T s) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / s;
    return make_op<T>(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / s;
    });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
    require_rank("add_bias", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (bias.numel() != n) {
        throw DimensionError("add_bias: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(bias.shape()));
    }
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
    return make_op<T>(a.shape(), std::move(out), {a, bias}, [m, n](Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& g = self.inputs[1]->grad_buffer();
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.data()) acc += v;
    return make_op<T>({}, {acc}, {a}, [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) {
        throw DimensionError("mean of empty tensor");
    }
    return div_scalar(sum(a), static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
    require_rank("row_sum", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m, T(0));
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r] += a[r * n + c];
    return make_op<T>({m}, std::move(out), {a}, [m, n](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
    return make_op<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.value[i] > T(0)) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = a[i];
        out[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return make_op<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = in.value[i];
            const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                    : std::exp(x) / (T(1) + std::exp(x));
            g[i] += self.grad[i] * sig;
        }
    });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
    return make_op<T>(a.shape(), out, {a}, [out](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i];
    });
}

template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, T eps) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a[i], eps));
    return make_op<T>(a.shape(), std::move(out), {a}, [eps](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (in.value[i] > eps) g[i] += self.grad[i] / in.value[i];
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, int axis, T temperature) {
    if (!(temperature > T(0))) {
        throw ParameterError("softmax: temperature must be positive, got " +
                             std::to_string(static_cast<double>(temperature)));
    }
    const auto& shape = logits.shape();
    if (shape.empty()) {
        throw DimensionError("softmax of a scalar");
    }
    const int rank = static_cast<int>(shape.size());
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(shape));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= shape[i];
    for (int i = ax + 1; i < rank; ++i) inner *= shape[i];
    const std::size_t len = shape[ax];

    std::vector<T> out(logits.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, logits[base + k * inner]);
            T total = T(0);
            for (std::size_t k = 0; k < len; ++k) {
                const T e = std::exp((logits[base + k * inner] - mx) / temperature);
                out[base + k * inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= total;
        }
    }
    return make_op<T>(shape, out, {logits},
                      [out, outer, inner, len, temperature](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                  const std::size_t base = o * len * inner + in;
                                  T dot = T(0);
                                  for (std::size_t k = 0; k < len; ++k) {
                                      const std::size_t i = base + k * inner;
                                      dot += self.grad[i] * out[i];
                                  }
                                  for (std::size_t k = 0; k < len; ++k) {
                                      const std::size_t i = base + k * inner;
                                      g[i] += out[i] * (self.grad[i] - dot) / temperature;
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& target, const Tensor<T>& pred) {
    require_same_shape("cross_entropy", target, pred);
    if (target.rank() != 1 && target.rank() != 2) {
        throw DimensionError("cross_entropy: expected a vector or matrix, got " +
                             shape_str(target.shape()));
    }
    const bool vector = target.rank() == 1;
    const std::size_t rows = vector ? 1 : target.dim(0);
    const std::size_t cols = vector ? target.dim(0) : target.dim(1);
    const T eps = T(kLogEps);
    std::vector<T> out(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            acc -= target[i] * std::log(std::max(pred[i], eps));
        }
        out[r] = acc;
    }
    Shape shape = vector ? Shape{} : Shape{rows};
    return make_op<T>(shape, std::move(out), {target, pred}, [rows, cols, eps](Node<T>& self) {
        auto& p = *self.inputs[0];
        auto& q = *self.inputs[1];
        if (p.requires_grad) {
            auto& g = p.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    g[i] -= self.grad[r] * std::log(std::max(q.value[i], eps));
                }
        }
        if (q.requires_grad) {
            auto& g = q.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    if (q.value[i] > eps) g[i] -= self.grad[r] * p.value[i] / q.value[i];
                }
        }
    });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps) {
    require_rank("l2_normalize_rows", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(a.numel());
    std::vector<T> norms(m);
    for (std::size_t r = 0; r < m; ++r) {
        T ss = T(0);
        for (std::size_t c = 0; c < n; ++c) ss += a[r * n + c] * a[r * n + c];
        norms[r] = std::sqrt(ss + eps);
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] / norms[r];
    }
    return make_op<T>(a.shape(), out, {a}, [out, norms, m, n](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < m; ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < n; ++c) dot += out[r * n + c] * self.grad[r * n + c];
            for (std::size_t c = 0; c < n; ++c) {
                const std::size_t i = r * n + c;
                g[i] += (self.grad[i] - out[i] * dot) / norms[r];
            }
        }
    });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    MapMat<T>(out.data(), m, n).noalias() =
        CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
    return make_op<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& y = *self.inputs[1];
        CMapMat<T> dc(self.grad.data(), m, n);
        if (x.requires_grad) {
            MapMat<T>(x.grad_buffer().data(), m, k).noalias() +=
                dc * CMapMat<T>(y.value.data(), k, n).transpose();
        }
        if (y.requires_grad) {
            MapMat<T>(y.grad_buffer().data(), k, n).noalias() +=
                CMapMat<T>(x.value.data(), m, k).transpose() * dc;
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_rank("transpose", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(a.numel());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[c * m + r] = a[r * n + c];
    return make_op<T>({n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c * m + r];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return make_op<T>(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rank() == 0 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1,
                                         p.shape().end())) {
            throw DimensionError("concat_rows: shape mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        offsets.push_back(rows * shape_numel(tail));
        rows += p.dim(0);
    }
    std::vector<T> out;
    out.reserve(rows * shape_numel(tail));
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return make_op<T>(std::move(shape), std::move(out), parts, [offsets](Node<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            auto& g = in.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    if (a.rank() == 0 || begin > end || end > a.dim(0)) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") of " + shape_str(a.shape()));
    }
    const std::size_t stride = a.numel() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<T> out(a.data().begin() + begin * stride, a.data().begin() + end * stride);
    const std::size_t offset = begin * stride;
    return make_op<T>(std::move(shape), std::move(out), {a}, [offset](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> index) {
    require_rank("pick", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (index.size() != m) {
        throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                             shape_str(a.shape()));
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<T> out(m);
    for (std::size_t r = 0; r < m; ++r) {
        if (idx[r] >= n) throw DimensionError("pick: index out of range");
        out[r] = a[r * n + idx[r]];
    }
    return make_op<T>({m}, std::move(out), {a}, [idx, n](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) g[r * n + idx[r]] += self.grad[r];
    });
}

namespace {

// cols: (C*k*k) x (H*W) for one image.
template <typename T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t pad, T* cols) {
    const std::size_t hw = H * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * hw;
                for (std::size_t y = 0; y < H; ++y) {
                    const long sy = static_cast<long>(y + ky) - static_cast<long>(pad);
                    for (std::size_t x = 0; x < W; ++x) {
                        const long sx = static_cast<long>(x + kx) - static_cast<long>(pad);
                        row[y * W + x] = (sy >= 0 && sy < static_cast<long>(H) && sx >= 0 &&
                                          sx < static_cast<long>(W))
                                             ? img[(c * H + sy) * W + sx]
                                             : T(0);
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t pad, T* img) {
    const std::size_t hw = H * W;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * hw;
                for (std::size_t y = 0; y < H; ++y) {
                    const long sy = static_cast<long>(y + ky) - static_cast<long>(pad);
                    if (sy < 0 || sy >= static_cast<long>(H)) continue;
                    for (std::size_t x = 0; x < W; ++x) {
                        const long sx = static_cast<long>(x + kx) - static_cast<long>(pad);
                        if (sx < 0 || sx >= static_cast<long>(W)) continue;
                        img[(c * H + sy) * W + sx] += row[y * W + x];
                    }
                }
            }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", weight, 4);
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != C || weight.dim(3) != k || bias.numel() != O) {
        throw DimensionError("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                             shape_str(weight.shape()));
    }
    if (H + 2 * pad < k || W + 2 * pad < k || 2 * pad + 1 != k) {
        throw DimensionError("conv2d: only same-size convolutions are supported, kernel " +
                             std::to_string(k) + " pad " + std::to_string(pad));
    }
    const std::size_t hw = H * W, ck = C * k * k;
    auto cols = std::make_shared<std::vector<T>>(N * ck * hw);
    std::vector<T> out(N * O * hw);
    CMapMat<T> wmat(weight.data().data(), O, ck);
    for (std::size_t n = 0; n < N; ++n) {
        T* col = cols->data() + n * ck * hw;
        im2col(x.data().data() + n * C * hw, C, H, W, k, pad, col);
        MapMat<T> o(out.data() + n * O * hw, O, hw);
        o.noalias() = wmat * CMapMat<T>(col, ck, hw);
        for (std::size_t oc = 0; oc < O; ++oc) o.row(oc).array() += bias[oc];
    }
    return make_op<T>({N, O, H, W}, std::move(out), {x, weight, bias},
                      [cols, N, C, H, W, O, k, pad, hw, ck](Node<T>& self) {
                          auto& xin = *self.inputs[0];
                          auto& win = *self.inputs[1];
                          auto& bin = *self.inputs[2];
                          if (win.requires_grad) {
                              MapMat<T> gw(win.grad_buffer().data(), O, ck);
                              for (std::size_t n = 0; n < N; ++n) {
                                  CMapMat<T> go(self.grad.data() + n * O * hw, O, hw);
                                  gw.noalias() +=
                                      go * CMapMat<T>(cols->data() + n * ck * hw, ck, hw)
                                               .transpose();
                              }
                          }
                          if (bin.requires_grad) {
                              auto& gb = bin.grad_buffer();
                              for (std::size_t n = 0; n < N; ++n)
                                  for (std::size_t oc = 0; oc < O; ++oc) {
                                      const T* go = self.grad.data() + (n * O + oc) * hw;
                                      T acc = T(0);
                                      for (std::size_t i = 0; i < hw; ++i) acc += go[i];
                                      gb[oc] += acc;
                                  }
                          }
                          if (xin.requires_grad) {
                              auto& gx = xin.grad_buffer();
                              CMapMat<T> wmat(win.value.data(), O, ck);
                              std::vector<T> dcol(ck * hw);
                              for (std::size_t n = 0; n < N; ++n) {
                                  MapMat<T>(dcol.data(), ck, hw).noalias() =
                                      wmat.transpose() *
                                      CMapMat<T>(self.grad.data() + n * O * hw, O, hw);
                                  col2im(dcol.data(), C, H, W, k, pad, gx.data() + n * C * hw);
                              }
                          }
                      });
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
    require_rank("max_pool2", x, 4);
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) {
        throw DimensionError("max_pool2: odd extent in " + shape_str(x.shape()));
    }
    const std::size_t Ho = H / 2, Wo = W / 2;
    std::vector<T> out(N * C * Ho * Wo);
    std::vector<std::size_t> argmax(out.size());
    for (std::size_t p = 0; p < N * C; ++p) {
        const T* src = x.data().data() + p * H * W;
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx) {
                std::size_t best = (2 * y) * W + 2 * xx;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t i = (2 * y + dy) * W + 2 * xx + dx;
                        if (src[i] > src[best]) best = i;
                    }
                const std::size_t o = p * Ho * Wo + y * Wo + xx;
                out[o] = src[best];
                argmax[o] = p * H * W + best;
            }
    }
    return make_op<T>({N, C, Ho, Wo}, std::move(out), {x}, [argmax](Node<T>& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    });
}

#define SEMALIGN_INSTANTIATE_OPS(T)                                                         \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> affine(const Tensor<T>&, T, T);                                      \
    template Tensor<T> div_scalar(const Tensor<T>&, T);                                     \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> sum(const Tensor<T>&);                                               \
    template Tensor<T> mean(const Tensor<T>&);                                              \
    template Tensor<T> row_sum(const Tensor<T>&);                                           \
    template Tensor<T> relu(const Tensor<T>&);                                              \
    template Tensor<T> softplus(const Tensor<T>&);                                          \
    template Tensor<T> exp(const Tensor<T>&);                                               \
    template Tensor<T> log_clamped(const Tensor<T>&, T);                                    \
    template Tensor<T> softmax(const Tensor<T>&, int, T);                                   \
    template Tensor<T> cross_entropy(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> l2_normalize_rows(const Tensor<T>&, T);                              \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> transpose(const Tensor<T>&);                                         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                          \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);              \
    template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>);                \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                              std::size_t);                                                 \
    template Tensor<T> max_pool2(const Tensor<T>&);

SEMALIGN_INSTANTIATE_OPS(float)
SEMALIGN_INSTANTIATE_OPS(double)

}  // namespace semalign
