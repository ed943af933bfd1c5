/**
 * @file tensor.hpp
 * @brief Dense tensors with a reverse-mode tape.
 *
 * Tensor is a shared handle: copies alias the same storage, which is what
 * lets parameters appear on a tape and receive gradients. Every operation
 * is a member of Tape; when any input requires a gradient the operation
 * appends its vector-Jacobian product to the tape, and Tape::backward
 * replays those entries in reverse creation order.
 *
 * Feature maps use channel-major layout [C, N, H, W], so a convolution over
 * a whole batch is a single GEMM.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spycer/error.hpp"

namespace spycer::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : d_(std::make_shared<TensorData<T>>()) {
        if (numel(shape) != values.size())
            fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(values.size()) +
                                               " does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->value = std::move(values);
        d_->requires_grad = requires_grad;
        if (requires_grad) d_->ensure_grad();
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }
    static Tensor filled(Shape shape, T v) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), false);
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t size() const { return d_->value.size(); }

    std::span<T> values() { return d_->value; }
    std::span<const T> values() const { return d_->value; }
    T& operator[](std::size_t i) { return d_->value[i]; }
    T operator[](std::size_t i) const { return d_->value[i]; }

    std::span<T> grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    std::span<const T> grad() const {
        d_->ensure_grad();
        return d_->grad;
    }
    void zero_grad() { d_->grad.assign(d_->value.size(), T(0)); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on) {
        d_->requires_grad = on;
        if (on) d_->ensure_grad();
    }

    T item() const {
        if (size() != 1) fail(ErrorKind::NotScalar, "item() on tensor of shape " + shape_str(shape()));
        return d_->value[0];
    }

    /// Deep copy without gradient tracking.
    Tensor detach() const { return Tensor(d_->shape, d_->value, false); }

    const std::shared_ptr<TensorData<T>>& impl() const { return d_; }

private:
    std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

/// View of `shape` as [outer, length, inner] around `axis`.
struct AxisView {
    std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) fail(ErrorKind::ShapeMismatch, "axis out of range for " + shape_str(s));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.length = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

/// 3x3 patches of x [C, N, H, W] as rows (c, ky, kx) x columns (n, y, x),
/// zero padded. Each plane is staged in a padded buffer so the gather is
/// branch-free.
template <typename T>
void im2col3(std::span<const T> x, std::size_t C, std::size_t N, std::size_t H, std::size_t W, T* cols) {
    const std::size_t plane = H * W, ncols = N * plane, PW = W + 2;
    std::vector<T> pad((H + 2) * PW, T(0));
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t n = 0; n < N; ++n) {
            const T* src = x.data() + (c * N + n) * plane;
            for (std::size_t y = 0; y < H; ++y) std::copy_n(src + y * W, W, pad.data() + (y + 1) * PW + 1);
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    T* dst = cols + ((c * 3 + ky) * 3 + kx) * ncols + n * plane;
                    for (std::size_t y = 0; y < H; ++y) std::copy_n(pad.data() + (y + ky) * PW + kx, W, dst + y * W);
                }
        }
    }
}

/// Adjoint of im2col3: scatter-adds rows back into dx [C, N, H, W].
template <typename T>
void col2im3(const T* cols, std::size_t C, std::size_t N, std::size_t H, std::size_t W, std::span<T> dx) {
    const std::size_t plane = H * W, ncols = N * plane, PW = W + 2;
    std::vector<T> pad((H + 2) * PW);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t n = 0; n < N; ++n) {
            std::fill(pad.begin(), pad.end(), T(0));
            for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const T* src = cols + ((c * 3 + ky) * 3 + kx) * ncols + n * plane;
                    for (std::size_t y = 0; y < H; ++y) {
                        T* d = pad.data() + (y + ky) * PW + kx;
                        for (std::size_t xx = 0; xx < W; ++xx) d[xx] += src[y * W + xx];
                    }
                }
            T* dst = dx.data() + (c * N + n) * plane;
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) dst[y * W + xx] += pad[(y + 1) * PW + xx + 1];
        }
    }
}

} // namespace detail

/// Records differentiable operations for one forward/backward pass.
template <typename T>
class Tape {
public:
    using TensorT = Tensor<T>;
    using Data = std::shared_ptr<TensorData<T>>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    /// Test hook: when on, the relu backward rule is deliberately wrong.
    /// Used as the negative control of the gradient checker.
    void inject_fault(bool on) { fault_ = on; }

    /// With recording disabled the tape acts as a plain evaluator
    /// (inference): outputs never require gradients and nothing is stored.
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    /// Smallest |input| seen by relu on this tape; gradient checks resample
    /// inputs that land too close to a kink.
    double relu_margin() const { return relu_margin_; }

    /// Populates gradients of every tracked tensor reachable from `loss`.
    void backward(const TensorT& loss) {
        if (loss.size() != 1) fail(ErrorKind::NotScalar, "backward() needs a scalar, got " + shape_str(loss.shape()));
        if (!loss.requires_grad()) return;
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
    }

    // ----- elementwise ------------------------------------------------------

    TensorT add(const TensorT& a, const TensorT& b) {
        same_shape(a, b, "add");
        auto out = make(a.shape(), any(a, b));
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
        if (out.requires_grad())
            record([A = a.impl(), B = b.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                accumulate(A, O->grad);
                accumulate(B, O->grad);
            });
        return out;
    }

    TensorT sub(const TensorT& a, const TensorT& b) {
        same_shape(a, b, "sub");
        auto out = make(a.shape(), any(a, b));
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
        if (out.requires_grad())
            record([A = a.impl(), B = b.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                accumulate(A, O->grad);
                if (B->requires_grad) {
                    B->ensure_grad();
                    for (std::size_t i = 0; i < O->grad.size(); ++i) B->grad[i] -= O->grad[i];
                }
            });
        return out;
    }

    TensorT mul(const TensorT& a, const TensorT& b) {
        same_shape(a, b, "mul");
        auto out = make(a.shape(), any(a, b));
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
        if (out.requires_grad())
            record([A = a.impl(), B = b.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                if (A->requires_grad) {
                    A->ensure_grad();
                    for (std::size_t i = 0; i < O->grad.size(); ++i) A->grad[i] += O->grad[i] * B->value[i];
                }
                if (B->requires_grad) {
                    B->ensure_grad();
                    for (std::size_t i = 0; i < O->grad.size(); ++i) B->grad[i] += O->grad[i] * A->value[i];
                }
            });
        return out;
    }

    /// scale * a + shift.
    TensorT affine(const TensorT& a, T scale, T shift = T(0)) {
        auto out = make(a.shape(), a.requires_grad());
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = scale * a[i] + shift;
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), scale] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t i = 0; i < O->grad.size(); ++i) A->grad[i] += scale * O->grad[i];
            });
        return out;
    }

    TensorT scale(const TensorT& a, T s) { return affine(a, s, T(0)); }

    TensorT square(const TensorT& a) {
        auto out = make(a.shape(), a.requires_grad());
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * a[i];
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t i = 0; i < O->grad.size(); ++i) A->grad[i] += T(2) * A->value[i] * O->grad[i];
            });
        return out;
    }

    /// Gradient at exactly 0 is 0.
    TensorT relu(const TensorT& a) {
        auto out = make(a.shape(), a.requires_grad());
        auto o = out.values();
        const T* in = a.values().data();
        T margin = std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] = std::max(in[i], T(0));
            margin = std::min(margin, std::abs(in[i]));
        }
        relu_margin_ = std::min(relu_margin_, static_cast<double>(margin));
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), k = fault_ ? T(1.5) : T(1)] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t i = 0; i < O->grad.size(); ++i)
                    A->grad[i] += A->value[i] > T(0) ? k * O->grad[i] : T(0);
            });
        return out;
    }

    /// Inverted dropout: kept activations are scaled by 1 / (1 - rate).
    /// Identity when `train` is false or rate is 0.
    TensorT dropout(const TensorT& a, double rate, bool train, std::mt19937_64& rng) {
        if (!train || rate <= 0.0) return a;
        if (rate >= 1.0) fail(ErrorKind::Config, "dropout rate must be < 1");
        // Four 16-bit uniforms per 64-bit draw; keep when u < (1 - rate) 2^16.
        const auto cut = static_cast<std::uint64_t>(std::llround((1.0 - rate) * 65536.0));
        const T s = static_cast<T>(1.0 / (1.0 - rate));
        auto mask = std::make_shared<std::vector<T>>(a.size());
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < mask->size(); ++i) {
            if (i % 4 == 0) bits = rng();
            (*mask)[i] = (bits & 0xFFFFu) < cut ? s : T(0);
            bits >>= 16;
        }
        auto out = make(a.shape(), a.requires_grad());
        auto o = out.values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * (*mask)[i];
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), mask] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t i = 0; i < O->grad.size(); ++i) A->grad[i] += O->grad[i] * (*mask)[i];
            });
        return out;
    }

    // ----- reductions -------------------------------------------------------

    TensorT sum(const TensorT& a) {
        auto out = make({1}, a.requires_grad());
        T acc = T(0);
        for (T v : a.values()) acc += v;
        out[0] = acc;
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (auto& g : A->grad) g += O->grad[0];
            });
        return out;
    }

    TensorT mean(const TensorT& a) { return scale(sum(a), T(1) / static_cast<T>(a.size())); }

    /// Softmax along `axis`. Positions with mask[k] != 0 (k indexing the
    /// axis) are excluded: they receive probability exactly 0.
    TensorT softmax(const TensorT& a, std::size_t axis, std::span<const std::uint8_t> mask = {}) {
        const auto v = detail::axis_view(a.shape(), axis);
        if (!mask.empty() && mask.size() != v.length)
            fail(ErrorKind::ShapeMismatch, "softmax mask length does not match axis");
        auto out = make(a.shape(), a.requires_grad());
        auto o = out.values();
        auto masked = [&](std::size_t k) { return !mask.empty() && mask[k] != 0; };
        for (std::size_t p = 0; p < v.outer; ++p) {
            for (std::size_t q = 0; q < v.inner; ++q) {
                const std::size_t base = p * v.length * v.inner + q;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t k = 0; k < v.length; ++k)
                    if (!masked(k)) mx = std::max(mx, a[base + k * v.inner]);
                T z = T(0);
                for (std::size_t k = 0; k < v.length; ++k) {
                    const std::size_t i = base + k * v.inner;
                    o[i] = masked(k) ? T(0) : std::exp(a[i] - mx);
                    z += o[i];
                }
                for (std::size_t k = 0; k < v.length; ++k) o[base + k * v.inner] /= z;
            }
        }
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), v] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t p = 0; p < v.outer; ++p) {
                    for (std::size_t q = 0; q < v.inner; ++q) {
                        const std::size_t base = p * v.length * v.inner + q;
                        T dot = T(0);
                        for (std::size_t k = 0; k < v.length; ++k) {
                            const std::size_t i = base + k * v.inner;
                            dot += O->grad[i] * O->value[i];
                        }
                        for (std::size_t k = 0; k < v.length; ++k) {
                            const std::size_t i = base + k * v.inner;
                            A->grad[i] += O->value[i] * (O->grad[i] - dot);
                        }
                    }
                }
            });
        return out;
    }

    /// Divides every slice along `axis` by its sum. Slices must have a
    /// nonzero sum.
    TensorT normalize(const TensorT& a, std::size_t axis) {
        const auto v = detail::axis_view(a.shape(), axis);
        auto out = make(a.shape(), a.requires_grad());
        auto sums = std::make_shared<std::vector<T>>(v.outer * v.inner);
        auto o = out.values();
        for (std::size_t p = 0; p < v.outer; ++p) {
            for (std::size_t q = 0; q < v.inner; ++q) {
                const std::size_t base = p * v.length * v.inner + q;
                T s = T(0);
                for (std::size_t k = 0; k < v.length; ++k) s += a[base + k * v.inner];
                if (s == T(0)) fail(ErrorKind::NumericFailure, "normalize over a zero-sum slice");
                (*sums)[p * v.inner + q] = s;
                for (std::size_t k = 0; k < v.length; ++k) o[base + k * v.inner] = a[base + k * v.inner] / s;
            }
        }
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), v, sums] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t p = 0; p < v.outer; ++p) {
                    for (std::size_t q = 0; q < v.inner; ++q) {
                        const std::size_t base = p * v.length * v.inner + q;
                        T dot = T(0);
                        for (std::size_t k = 0; k < v.length; ++k) {
                            const std::size_t i = base + k * v.inner;
                            dot += O->grad[i] * O->value[i];
                        }
                        const T s = (*sums)[p * v.inner + q];
                        for (std::size_t k = 0; k < v.length; ++k) {
                            const std::size_t i = base + k * v.inner;
                            A->grad[i] += (O->grad[i] - dot) / s;
                        }
                    }
                }
            });
        return out;
    }

    // ----- shape ------------------------------------------------------------

    TensorT reshape(const TensorT& a, Shape shape) {
        if (numel(shape) != a.size())
            fail(ErrorKind::ShapeMismatch, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
        auto out = make(std::move(shape), a.requires_grad());
        std::copy(a.values().begin(), a.values().end(), out.values().begin());
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl()] {
                if (O->grad.empty()) return;
                accumulate(A, O->grad);
            });
        return out;
    }

    /// Elements [begin, end) along `axis`.
    TensorT slice(const TensorT& a, std::size_t axis, std::size_t begin, std::size_t end) {
        const auto v = detail::axis_view(a.shape(), axis);
        if (begin > end || end > v.length) fail(ErrorKind::ShapeMismatch, "slice out of range");
        Shape s = a.shape();
        s[axis] = end - begin;
        auto out = make(s, a.requires_grad());
        const std::size_t len = end - begin;
        auto o = out.values();
        for (std::size_t p = 0; p < v.outer; ++p)
            std::copy_n(a.values().data() + (p * v.length + begin) * v.inner, len * v.inner,
                        o.data() + p * len * v.inner);
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), v, begin, len] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t p = 0; p < v.outer; ++p)
                    for (std::size_t i = 0; i < len * v.inner; ++i)
                        A->grad[(p * v.length + begin) * v.inner + i] += O->grad[p * len * v.inner + i];
            });
        return out;
    }

    TensorT concat(const std::vector<TensorT>& parts, std::size_t axis) {
        if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat of nothing");
        Shape s = parts.front().shape();
        std::size_t total = 0;
        bool rg = false;
        for (const auto& p : parts) {
            Shape q = p.shape();
            if (q.size() != s.size()) fail(ErrorKind::ShapeMismatch, "concat rank mismatch");
            total += q.at(axis);
            q[axis] = s[axis];
            if (q != s) fail(ErrorKind::ShapeMismatch, "concat shape mismatch");
            rg = rg || p.requires_grad();
        }
        s[axis] = total;
        auto out = make(s, rg);
        const auto v = detail::axis_view(s, axis);
        std::size_t offset = 0;
        std::vector<std::pair<Data, std::size_t>> pieces;
        for (const auto& p : parts) {
            const std::size_t len = p.dim(axis);
            for (std::size_t q = 0; q < v.outer; ++q)
                std::copy_n(p.values().data() + q * len * v.inner, len * v.inner,
                            out.values().data() + (q * total + offset) * v.inner);
            pieces.emplace_back(p.impl(), offset);
            offset += len;
        }
        if (out.requires_grad())
            record([pieces, O = out.impl(), v, total] {
                if (O->grad.empty()) return;
                for (const auto& [P, off] : pieces) {
                    if (!P->requires_grad) continue;
                    P->ensure_grad();
                    const std::size_t len = P->value.size() / (v.outer * v.inner);
                    for (std::size_t q = 0; q < v.outer; ++q)
                        for (std::size_t i = 0; i < len * v.inner; ++i)
                            P->grad[q * len * v.inner + i] += O->grad[(q * total + off) * v.inner + i];
                }
            });
        return out;
    }

    /// Window [top, top+h) x [left, left+w) of the last two dimensions.
    TensorT crop(const TensorT& a, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
        if (a.rank() < 2) fail(ErrorKind::ShapeMismatch, "crop needs rank >= 2");
        const std::size_t H = a.dim(a.rank() - 2), W = a.dim(a.rank() - 1);
        if (top + h > H || left + w > W) fail(ErrorKind::ShapeMismatch, "crop window out of range");
        Shape s = a.shape();
        s[s.size() - 2] = h;
        s[s.size() - 1] = w;
        const std::size_t planes = a.size() / (H * W);
        auto out = make(s, a.requires_grad());
        auto o = out.values();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    o[(p * h + y) * w + x] = a[(p * H + top + y) * W + left + x];
        if (out.requires_grad())
            record([A = a.impl(), O = out.impl(), planes, H, W, top, left, h, w] {
                if (O->grad.empty()) return;
                A->ensure_grad();
                for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x)
                            A->grad[(p * H + top + y) * W + left + x] += O->grad[(p * h + y) * w + x];
            });
        return out;
    }

    // ----- linear algebra ---------------------------------------------------

    /// a [n, k] x b [k, m].
    TensorT matmul(const TensorT& a, const TensorT& b) {
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
            fail(ErrorKind::ShapeMismatch, "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
        const auto n = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
                   m = static_cast<Eigen::Index>(b.dim(1));
        auto out = make({a.dim(0), b.dim(1)}, any(a, b));
        Eigen::Map<MatR<T>>(out.values().data(), n, m).noalias() =
            Eigen::Map<const MatR<T>>(a.values().data(), n, k) * Eigen::Map<const MatR<T>>(b.values().data(), k, m);
        if (out.requires_grad())
            record([A = a.impl(), B = b.impl(), O = out.impl(), n, k, m] {
                if (O->grad.empty()) return;
                Eigen::Map<const MatR<T>> g(O->grad.data(), n, m);
                if (A->requires_grad) {
                    A->ensure_grad();
                    Eigen::Map<MatR<T>>(A->grad.data(), n, k).noalias() +=
                        g * Eigen::Map<const MatR<T>>(B->value.data(), k, m).transpose();
                }
                if (B->requires_grad) {
                    B->ensure_grad();
                    Eigen::Map<MatR<T>>(B->grad.data(), k, m).noalias() +=
                        Eigen::Map<const MatR<T>>(A->value.data(), n, k).transpose() * g;
                }
            });
        return out;
    }

    /// a [n, m] + bias [m] broadcast over rows.
    TensorT add_bias(const TensorT& a, const TensorT& bias) {
        if (a.rank() != 2 || bias.size() != a.dim(1))
            fail(ErrorKind::ShapeMismatch, "add_bias " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
        const std::size_t n = a.dim(0), m = a.dim(1);
        auto out = make(a.shape(), any(a, bias));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] = a[i * m + j] + bias[j];
        if (out.requires_grad())
            record([A = a.impl(), B = bias.impl(), O = out.impl(), n, m] {
                if (O->grad.empty()) return;
                accumulate(A, O->grad);
                if (B->requires_grad) {
                    B->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) B->grad[j] += O->grad[i * m + j];
                }
            });
        return out;
    }

    /// Stride-1 convolution with zero padding that preserves H x W.
    /// x [C, N, H, W], weight [Co, C, k, k] with k in {1, 3}, bias [Co].
    TensorT conv2d(const TensorT& x, const TensorT& weight, const TensorT& bias) {
        if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3) ||
            (weight.dim(2) != 1 && weight.dim(2) != 3) || bias.size() != weight.dim(0))
            fail(ErrorKind::ShapeMismatch,
                 "conv2d x" + shape_str(x.shape()) + " w" + shape_str(weight.shape()) + " b" + shape_str(bias.shape()));
        const std::size_t C = x.dim(0), N = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::size_t Co = weight.dim(0), k = weight.dim(2);
        const std::size_t ncols = N * H * W, krows = C * k * k;
        const auto eCo = static_cast<Eigen::Index>(Co), eK = static_cast<Eigen::Index>(krows),
                   eN = static_cast<Eigen::Index>(ncols);

        std::shared_ptr<std::vector<T>> cols;
        const T* colp = x.values().data();
        if (k == 3) {
            cols = std::make_shared<std::vector<T>>(krows * ncols);
            detail::im2col3<T>(x.values(), C, N, H, W, cols->data());
            colp = cols->data();
        }
        auto out = make({Co, N, H, W}, any(x, weight) || bias.requires_grad());
        Eigen::Map<MatR<T>> o(out.values().data(), eCo, eN);
        o.noalias() = Eigen::Map<const MatR<T>>(weight.values().data(), eCo, eK) *
                      Eigen::Map<const MatR<T>>(colp, eK, eN);
        for (std::size_t c = 0; c < Co; ++c) o.row(static_cast<Eigen::Index>(c)).array() += bias[c];

        if (out.requires_grad())
            record([X = x.impl(), Wt = weight.impl(), B = bias.impl(), O = out.impl(), cols, C, N, H, W, k, eCo,
                    eK, eN] {
                if (O->grad.empty()) return;
                Eigen::Map<const MatR<T>> g(O->grad.data(), eCo, eN);
                const T* cp = k == 3 ? cols->data() : X->value.data();
                Eigen::Map<const MatR<T>> colm(cp, eK, eN);
                if (Wt->requires_grad) {
                    Wt->ensure_grad();
                    Eigen::Map<MatR<T>>(Wt->grad.data(), eCo, eK).noalias() += g * colm.transpose();
                }
                if (B->requires_grad) {
                    B->ensure_grad();
                    // Plain loop: Eigen reductions peel to alignment, which
                    // would make the sum order depend on the allocation address.
                    for (Eigen::Index c = 0; c < eCo; ++c) {
                        const T* row = O->grad.data() + c * eN;
                        T s = T(0);
                        for (Eigen::Index j = 0; j < eN; ++j) s += row[j];
                        B->grad[static_cast<std::size_t>(c)] += s;
                    }
                }
                if (X->requires_grad) {
                    X->ensure_grad();
                    Eigen::Map<const MatR<T>> wm(Wt->value.data(), eCo, eK);
                    if (k == 1) {
                        Eigen::Map<MatR<T>>(X->grad.data(), eK, eN).noalias() += wm.transpose() * g;
                    } else {
                        MatR<T> dcols = wm.transpose() * g;
                        detail::col2im3<T>(dcols.data(), C, N, H, W, X->grad);
                    }
                }
            });
        return out;
    }

private:
    static bool any(const TensorT& a, const TensorT& b) { return a.requires_grad() || b.requires_grad(); }

    static void same_shape(const TensorT& a, const TensorT& b, const char* op) {
        if (a.shape() != b.shape())
            fail(ErrorKind::ShapeMismatch,
                 std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }

    TensorT make(Shape shape, bool requires_grad) const {
        const auto n = numel(shape);
        TensorT t(std::move(shape), std::vector<T>(n), false);
        // Intermediate results track gradients but allocate grad lazily.
        t.impl()->requires_grad = requires_grad && grad_enabled_;
        return t;
    }

    static void accumulate(const Data& target, const std::vector<T>& g) {
        if (!target->requires_grad) return;
        target->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += g[i];
    }

    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

    std::vector<std::function<void()>> entries_;
    bool fault_ = false;
    bool grad_enabled_ = true;
    double relu_margin_ = std::numeric_limits<double>::infinity();
};

} // namespace spycer::ad
