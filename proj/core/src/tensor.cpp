#include "ila/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace ila {

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream ss;
    ss << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) ss << 'x';
        ss << shape[i];
    }
    ss << ']';
    return ss.str();
}

namespace {

using detail::TensorImpl;

void validate_shape(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    }
}

void check_finite(std::span<const float> v, const char* op) {
    bool ok = true;
    for (const float x : v) ok &= (std::fabs(x) <= std::numeric_limits<float>::max());
    if (!ok) throw NumericsError(std::string("non-finite value in output of ") + op);
}

std::vector<float>& ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0f);
    return t.grad;
}

// C(m x n) += A(m x k) * B(k x n), all row-major contiguous
void gemm_acc(int m, int n, int k, const float* A, const float* B, float* C) {
    for (int i = 0; i < m; ++i) {
        const float* a = A + static_cast<size_t>(i) * k;
        float* c = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = a[p];
            const float* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void transpose(int rows, int cols, const float* src, float* dst) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            dst[static_cast<size_t>(c) * rows + r] = src[static_cast<size_t>(r) * cols + c];
}

struct ConvDims {
    int n, ci, h, w;
    int co, kh, kw;
    int stride, pad;
    int ho, wo;
    int q() const { return ci * kh * kw; }
    int t() const { return ho * wo; }
};

// col is (ci*kh*kw) x (ho*wo), zero-filled where the window leaves the image
void im2col(const ConvDims& d, const float* in_n, float* col) {
    const int T = d.t();
    for (int i = 0; i < d.ci; ++i) {
        const float* plane = in_n + static_cast<size_t>(i) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                float* row = col + (static_cast<size_t>(i) * d.kh * d.kw +
                                    static_cast<size_t>(ky) * d.kw + kx) * T;
                for (int yo = 0; yo < d.ho; ++yo) {
                    const int y = yo * d.stride - d.pad + ky;
                    float* out_row = row + static_cast<size_t>(yo) * d.wo;
                    if (y < 0 || y >= d.h) {
                        std::fill(out_row, out_row + d.wo, 0.0f);
                        continue;
                    }
                    const float* in_row = plane + static_cast<size_t>(y) * d.w;
                    for (int xo = 0; xo < d.wo; ++xo) {
                        const int x = xo * d.stride - d.pad + kx;
                        out_row[xo] = (x >= 0 && x < d.w) ? in_row[x] : 0.0f;
                    }
                }
            }
        }
    }
}

// scatter-add of a col-shaped gradient back onto the input plane
void col2im_acc(const ConvDims& d, const float* col, float* din_n) {
    const int T = d.t();
    for (int i = 0; i < d.ci; ++i) {
        float* plane = din_n + static_cast<size_t>(i) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const float* row = col + (static_cast<size_t>(i) * d.kh * d.kw +
                                          static_cast<size_t>(ky) * d.kw + kx) * T;
                for (int yo = 0; yo < d.ho; ++yo) {
                    const int y = yo * d.stride - d.pad + ky;
                    if (y < 0 || y >= d.h) continue;
                    float* in_row = plane + static_cast<size_t>(y) * d.w;
                    const float* g_row = row + static_cast<size_t>(yo) * d.wo;
                    for (int xo = 0; xo < d.wo; ++xo) {
                        const int x = xo * d.stride - d.pad + kx;
                        if (x >= 0 && x < d.w) in_row[x] += g_row[xo];
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->values.assign(shape_numel(shape), 0.0f);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from(Shape{}, {value}, requires_grad);
}

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw Error("tensor has no gradient");
    return impl_->grad;
}

void Tensor::set_grad(std::vector<float> grad) {
    if (grad.size() != impl_->values.size()) {
        throw ShapeError("gradient length does not match tensor length");
    }
    impl_->grad = std::move(grad);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

float Tensor::item() const {
    if (!impl_ || impl_->values.size() != 1) {
        throw ShapeError("item() requires a single-element tensor");
    }
    return impl_->values[0];
}

Tensor Tensor::clone() const {
    return from(impl_->shape, impl_->values);
}

// ---------------------------------------------------------------------------
// Tape bookkeeping
// ---------------------------------------------------------------------------

bool Tape::track(std::initializer_list<const Tensor*> inputs) const {
    if (!recording_) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void Tape::record(std::function<void()> fn) {
    if (consumed_) {
        throw Error("tape already consumed by backward; reset before recording");
    }
    nodes_.push_back(Node{std::move(fn)});
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw Error("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (consumed_) {
        throw Error("backward already ran on this tape; re-record before running again");
    }
    consumed_ = true;
    auto li = loss.impl();
    ensure_grad(*li);
    li->grad[0] = 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}
}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    check_finite(ov, "add");
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                auto& g = ensure_grad(*ai);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                auto& g = ensure_grad(*bi);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    check_finite(ov, "sub");
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                auto& g = ensure_grad(*ai);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
            }
            if (bi->requires_grad) {
                auto& g = ensure_grad(*bi);
                for (size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    check_finite(ov, "mul");
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                auto& g = ensure_grad(*ai);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * bi->values[i];
            }
            if (bi->requires_grad) {
                auto& g = ensure_grad(*bi);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * ai->values[i];
            }
        });
    }
    return out;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    check_finite(ov, "div");
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                auto& g = ensure_grad(*ai);
                for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] / bi->values[i];
            }
            if (bi->requires_grad) {
                auto& g = ensure_grad(*bi);
                for (size_t i = 0; i < g.size(); ++i) {
                    const float bv_i = bi->values[i];
                    g[i] -= oi->grad[i] * ai->values[i] / (bv_i * bv_i);
                }
            }
        });
    }
    return out;
}

Tensor Tape::scalar_mul(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
    check_finite(ov, "scalar_mul");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi, s] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * s;
        });
    }
    return out;
}

Tensor Tape::relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0f ? av[i] : 0.0f;
    check_finite(ov, "relu");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            for (size_t i = 0; i < g.size(); ++i) {
                if (ai->values[i] > 0.0f) g[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::clamp(const Tensor& a, float lo, float hi) {
    if (!(lo <= hi)) throw Error("clamp: lo > hi");
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(hi, std::max(lo, av[i]));
    check_finite(ov, "clamp");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi, lo, hi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            for (size_t i = 0; i < g.size(); ++i) {
                const float x = ai->values[i];
                if (x > lo && x < hi) g[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto av = a.values();
    auto ov = out.values_mut();
    for (size_t i = 0; i < ov.size(); ++i) {
        const float x = av[i];
        ov[i] = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                          : std::exp(x) / (1.0f + std::exp(x));
    }
    check_finite(ov, "sigmoid");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            for (size_t i = 0; i < g.size(); ++i) {
                const float s = oi->values[i];
                g[i] += oi->grad[i] * s * (1.0f - s);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Tensor Tape::conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    int stride, int pad) {
    if (input.ndim() != 4) throw ShapeError("conv2d: input must be NCHW");
    if (weight.ndim() != 4) throw ShapeError("conv2d: weight must be OIHW");
    if (bias.ndim() != 1) throw ShapeError("conv2d: bias must be 1-d");
    if (stride < 1) throw Error("conv2d: stride must be positive");
    if (pad < 0) throw Error("conv2d: pad must be non-negative");

    ConvDims d;
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.stride = stride;
    d.pad = pad;

    if (weight.dim(1) != d.ci) {
        throw ShapeError("conv2d: input channels " + std::to_string(d.ci) +
                         " do not match weight input channels " + std::to_string(weight.dim(1)));
    }
    if (bias.dim(0) != d.co) throw ShapeError("conv2d: bias length must equal output channels");
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;

    Tensor out = Tensor::zeros({d.n, d.co, d.ho, d.wo});
    const int Q = d.q();
    const int T = d.t();
    const float* in = input.values().data();
    const float* wmat = weight.values().data();  // O x Q, already contiguous
    const float* bv = bias.values().data();
    float* ov = out.values_mut().data();

    parallel_for(d.n, [&](int n0, int n1) {
        std::vector<float> col(static_cast<size_t>(Q) * T);
        for (int n = n0; n < n1; ++n) {
            im2col(d, in + static_cast<size_t>(n) * d.ci * d.h * d.w, col.data());
            float* out_n = ov + static_cast<size_t>(n) * d.co * T;
            for (int o = 0; o < d.co; ++o) {
                std::fill(out_n + static_cast<size_t>(o) * T,
                          out_n + static_cast<size_t>(o + 1) * T, bv[o]);
            }
            gemm_acc(d.co, T, Q, wmat, col.data(), out_n);
        }
    });
    check_finite(out.values(), "conv2d");

    if (track({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = weight.impl(), bi_ = bias.impl(), oi = out.impl();
        record([xi, wi, bi_, oi, d] {
            if (oi->grad.empty()) return;
            const int Q = d.q();
            const int T = d.t();
            const bool need_dx = xi->requires_grad;
            const bool need_dw = wi->requires_grad;
            const bool need_db = bi_->requires_grad;
            if (!need_dx && !need_dw && !need_db) return;

            std::vector<float> wt;  // Q x O, for the input gradient
            if (need_dx) {
                ensure_grad(*xi);
                wt.resize(static_cast<size_t>(Q) * d.co);
                transpose(d.co, Q, wi->values.data(), wt.data());
            }
            // per-sample partials keep the weight/bias reduction order fixed
            std::vector<std::vector<float>> dw_parts, db_parts;
            if (need_dw) dw_parts.assign(d.n, {});
            if (need_db) db_parts.assign(d.n, {});

            const float* dout = oi->grad.data();
            parallel_for(d.n, [&](int n0, int n1) {
                std::vector<float> col, dcol;
                for (int n = n0; n < n1; ++n) {
                    const float* dout_n = dout + static_cast<size_t>(n) * d.co * T;
                    if (need_dx) {
                        dcol.assign(static_cast<size_t>(Q) * T, 0.0f);
                        gemm_acc(Q, T, d.co, wt.data(), dout_n, dcol.data());
                        col2im_acc(d, dcol.data(),
                                   xi->grad.data() + static_cast<size_t>(n) * d.ci * d.h * d.w);
                    }
                    if (need_dw) {
                        col.resize(static_cast<size_t>(Q) * T);
                        im2col(d, xi->values.data() + static_cast<size_t>(n) * d.ci * d.h * d.w,
                               col.data());
                        std::vector<float> colt(static_cast<size_t>(T) * Q);
                        transpose(Q, T, col.data(), colt.data());
                        dw_parts[n].assign(static_cast<size_t>(d.co) * Q, 0.0f);
                        gemm_acc(d.co, Q, T, dout_n, colt.data(), dw_parts[n].data());
                    }
                    if (need_db) {
                        db_parts[n].resize(d.co);
                        for (int o = 0; o < d.co; ++o) {
                            double acc = 0.0;
                            const float* row = dout_n + static_cast<size_t>(o) * T;
                            for (int t = 0; t < T; ++t) acc += row[t];
                            db_parts[n][o] = static_cast<float>(acc);
                        }
                    }
                }
            });
            if (need_dw) {
                auto& g = ensure_grad(*wi);
                for (int n = 0; n < d.n; ++n)
                    for (size_t i = 0; i < g.size(); ++i) g[i] += dw_parts[n][i];
            }
            if (need_db) {
                auto& g = ensure_grad(*bi_);
                for (int n = 0; n < d.n; ++n)
                    for (int o = 0; o < d.co; ++o) g[o] += db_parts[n][o];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

Tensor Tape::pool2d(const Tensor& input, PoolMode mode, int k, int stride) {
    return pool2d_padded(input, mode, k, stride, 0);
}

Tensor Tape::pool2d_padded(const Tensor& input, PoolMode mode, int k, int stride, int pad) {
    if (input.ndim() != 4) throw ShapeError("pool2d: input must be NCHW");
    if (k <= 0 || stride <= 0) throw Error("pool2d: window and stride must be positive");
    if (pad < 0 || pad >= k) throw Error("pool2d: pad must be in [0, k)");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h + 2 * pad < k || w + 2 * pad < k) {
        throw ShapeError("pool2d: window larger than padded input");
    }
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;

    Tensor out = Tensor::zeros({n, c, ho, wo});
    const float* in = input.values().data();
    float* ov = out.values_mut().data();
    // max: flat input index of the first maximum per window, in scan order
    auto argmax = std::make_shared<std::vector<int>>();
    if (mode == PoolMode::Max) argmax->assign(out.numel(), -1);

    const size_t plane = static_cast<size_t>(h) * w;
    size_t oidx = 0;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            const float* p = in + (static_cast<size_t>(ni) * c + ci) * plane;
            const size_t pbase = (static_cast<size_t>(ni) * c + ci) * plane;
            for (int yo = 0; yo < ho; ++yo) {
                for (int xo = 0; xo < wo; ++xo, ++oidx) {
                    const int y0 = yo * stride - pad;
                    const int x0 = xo * stride - pad;
                    if (mode == PoolMode::Max) {
                        float best = -std::numeric_limits<float>::infinity();
                        int best_idx = -1;
                        for (int dy = 0; dy < k; ++dy) {
                            const int y = y0 + dy;
                            if (y < 0 || y >= h) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int x = x0 + dx;
                                if (x < 0 || x >= w) continue;
                                const float v = p[static_cast<size_t>(y) * w + x];
                                if (v > best) {
                                    best = v;
                                    best_idx = static_cast<int>(pbase) + y * w + x;
                                }
                            }
                        }
                        ov[oidx] = best;
                        (*argmax)[oidx] = best_idx;
                    } else {
                        double acc = 0.0;
                        int count = 0;
                        for (int dy = 0; dy < k; ++dy) {
                            const int y = y0 + dy;
                            if (y < 0 || y >= h) continue;
                            for (int dx = 0; dx < k; ++dx) {
                                const int x = x0 + dx;
                                if (x < 0 || x >= w) continue;
                                acc += p[static_cast<size_t>(y) * w + x];
                                ++count;
                            }
                        }
                        ov[oidx] = static_cast<float>(acc / count);
                    }
                }
            }
        }
    }
    check_finite(out.values(), "pool2d");

    if (track({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, argmax, mode, k, stride, pad, n, c, h, w, ho, wo] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            auto& g = ensure_grad(*xi);
            if (mode == PoolMode::Max) {
                for (size_t i = 0; i < oi->grad.size(); ++i) {
                    g[(*argmax)[i]] += oi->grad[i];
                }
                return;
            }
            const size_t plane = static_cast<size_t>(h) * w;
            size_t oidx = 0;
            for (int ni = 0; ni < n; ++ni) {
                for (int ci = 0; ci < c; ++ci) {
                    float* gp = g.data() + (static_cast<size_t>(ni) * c + ci) * plane;
                    for (int yo = 0; yo < ho; ++yo) {
                        for (int xo = 0; xo < wo; ++xo, ++oidx) {
                            const int y0 = yo * stride - pad;
                            const int x0 = xo * stride - pad;
                            int count = 0;
                            for (int dy = 0; dy < k; ++dy) {
                                const int y = y0 + dy;
                                if (y < 0 || y >= h) continue;
                                for (int dx = 0; dx < k; ++dx) {
                                    const int x = x0 + dx;
                                    if (x >= 0 && x < w) ++count;
                                }
                            }
                            const float share = oi->grad[oidx] / static_cast<float>(count);
                            for (int dy = 0; dy < k; ++dy) {
                                const int y = y0 + dy;
                                if (y < 0 || y >= h) continue;
                                for (int dx = 0; dx < k; ++dx) {
                                    const int x = x0 + dx;
                                    if (x >= 0 && x < w) gp[static_cast<size_t>(y) * w + x] += share;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor Tape::global_avg_pool(const Tensor& input) {
    if (input.ndim() != 4) throw ShapeError("global_avg_pool: input must be NCHW");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int hw = h * w;
    Tensor out = Tensor::zeros({n, c});
    const float* in = input.values().data();
    float* ov = out.values_mut().data();
    for (int i = 0; i < n * c; ++i) {
        const float* p = in + static_cast<size_t>(i) * hw;
        double acc = 0.0;
        for (int j = 0; j < hw; ++j) acc += p[j];
        ov[i] = static_cast<float>(acc / hw);
    }
    check_finite(out.values(), "global_avg_pool");
    if (track({&input})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), oi = out.impl();
        record([xi, oi, n, c, hw] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            auto& g = ensure_grad(*xi);
            for (int i = 0; i < n * c; ++i) {
                const float share = oi->grad[i] / static_cast<float>(hw);
                float* gp = g.data() + static_cast<size_t>(i) * hw;
                for (int j = 0; j < hw; ++j) gp[j] += share;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Tensor Tape::linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.ndim() != 2) throw ShapeError("linear: input must be NxD");
    if (weight.ndim() != 2) throw ShapeError("linear: weight must be KxD");
    if (bias.ndim() != 1) throw ShapeError("linear: bias must be 1-d");
    const int n = input.dim(0), din = input.dim(1);
    const int k = weight.dim(0);
    if (weight.dim(1) != din) {
        throw ShapeError("linear: input feature dim " + std::to_string(din) +
                         " does not match weight dim " + std::to_string(weight.dim(1)));
    }
    if (bias.dim(0) != k) throw ShapeError("linear: bias length must equal output features");

    Tensor out = Tensor::zeros({n, k});
    std::vector<float> wt(static_cast<size_t>(din) * k);
    transpose(k, din, weight.values().data(), wt.data());
    float* ov = out.values_mut().data();
    const float* bv = bias.values().data();
    for (int i = 0; i < n; ++i) {
        std::copy(bv, bv + k, ov + static_cast<size_t>(i) * k);
    }
    gemm_acc(n, k, din, input.values().data(), wt.data(), ov);
    check_finite(out.values(), "linear");

    if (track({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = weight.impl(), bi_ = bias.impl(), oi = out.impl();
        record([xi, wi, bi_, oi, n, din, k] {
            if (oi->grad.empty()) return;
            const float* dout = oi->grad.data();
            if (xi->requires_grad) {
                auto& g = ensure_grad(*xi);
                gemm_acc(n, din, k, dout, wi->values.data(), g.data());
            }
            if (wi->requires_grad) {
                auto& g = ensure_grad(*wi);
                std::vector<float> doutt(static_cast<size_t>(k) * n);
                transpose(n, k, dout, doutt.data());
                gemm_acc(k, din, n, doutt.data(), xi->values.data(), g.data());
            }
            if (bi_->requires_grad) {
                auto& g = ensure_grad(*bi_);
                for (int j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) acc += dout[static_cast<size_t>(i) * k + j];
                    g[j] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor Tape::reshape(const Tensor& a, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) +
                         " -> " + shape_str(shape));
    }
    Tensor out = Tensor::from(std::move(shape),
                              std::vector<float>(a.values().begin(), a.values().end()));
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            for (size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor Tape::concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    int c_total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: inputs must agree on N, H, W");
        }
        c_total += p.dim(1);
    }
    Tensor out = Tensor::zeros({n, c_total, h, w});
    const size_t plane = static_cast<size_t>(h) * w;
    float* ov = out.values_mut().data();
    int c_off = 0;
    for (const Tensor& p : parts) {
        const int pc = p.dim(1);
        const float* pv = p.values().data();
        for (int ni = 0; ni < n; ++ni) {
            std::memcpy(ov + (static_cast<size_t>(ni) * c_total + c_off) * plane,
                        pv + static_cast<size_t>(ni) * pc * plane,
                        static_cast<size_t>(pc) * plane * sizeof(float));
        }
        c_off += pc;
    }

    bool any_grad = false;
    for (const Tensor& p : parts) any_grad |= p.requires_grad();
    if (recording_ && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        record([impls, oi, n, c_total, plane] {
            if (oi->grad.empty()) return;
            int c_off = 0;
            for (const auto& pi : impls) {
                const int pc = pi->shape[1];
                if (pi->requires_grad) {
                    auto& g = ensure_grad(*pi);
                    for (int ni = 0; ni < n; ++ni) {
                        const float* src =
                            oi->grad.data() + (static_cast<size_t>(ni) * c_total + c_off) * plane;
                        float* dst = g.data() + static_cast<size_t>(ni) * pc * plane;
                        for (size_t i = 0; i < static_cast<size_t>(pc) * plane; ++i) dst[i] += src[i];
                    }
                }
                c_off += pc;
            }
        });
    }
    return out;
}

Tensor Tape::channel_scale(const Tensor& x, const Tensor& gate) {
    if (x.ndim() != 4) throw ShapeError("channel_scale: x must be NCHW");
    if (gate.ndim() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1)) {
        throw ShapeError("channel_scale: gate must be NxC matching x");
    }
    const int n = x.dim(0), c = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros(x.shape());
    const float* xv = x.values().data();
    const float* gv = gate.values().data();
    float* ov = out.values_mut().data();
    for (int i = 0; i < n * c; ++i) {
        const float s = gv[i];
        const float* src = xv + static_cast<size_t>(i) * plane;
        float* dst = ov + static_cast<size_t>(i) * plane;
        for (size_t j = 0; j < plane; ++j) dst[j] = src[j] * s;
    }
    check_finite(out.values(), "channel_scale");
    if (track({&x, &gate})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), gi = gate.impl(), oi = out.impl();
        record([xi, gi, oi, n, c, plane] {
            if (oi->grad.empty()) return;
            if (xi->requires_grad) {
                auto& g = ensure_grad(*xi);
                for (int i = 0; i < n * c; ++i) {
                    const float s = gi->values[i];
                    const float* dout = oi->grad.data() + static_cast<size_t>(i) * plane;
                    float* dst = g.data() + static_cast<size_t>(i) * plane;
                    for (size_t j = 0; j < plane; ++j) dst[j] += dout[j] * s;
                }
            }
            if (gi->requires_grad) {
                auto& g = ensure_grad(*gi);
                for (int i = 0; i < n * c; ++i) {
                    const float* dout = oi->grad.data() + static_cast<size_t>(i) * plane;
                    const float* src = xi->values.data() + static_cast<size_t>(i) * plane;
                    double acc = 0.0;
                    for (size_t j = 0; j < plane; ++j) acc += static_cast<double>(dout[j]) * src[j];
                    g[i] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor Tape::channel_slice(const Tensor& x, int channel) {
    if (x.ndim() != 4 && x.ndim() != 2) {
        throw ShapeError("channel_slice: x must be NCHW or NC");
    }
    const int n = x.dim(0), c = x.dim(1);
    if (channel < 0 || channel >= c) {
        throw ShapeError("channel_slice: channel " + std::to_string(channel) +
                         " out of range [0, " + std::to_string(c) + ")");
    }
    const size_t plane = x.ndim() == 4 ? static_cast<size_t>(x.dim(2)) * x.dim(3) : 1;
    Shape oshape = x.ndim() == 4 ? Shape{n, 1, x.dim(2), x.dim(3)} : Shape{n, 1};
    Tensor out = Tensor::zeros(oshape);
    const float* xv = x.values().data();
    float* ov = out.values_mut().data();
    for (int ni = 0; ni < n; ++ni) {
        std::memcpy(ov + static_cast<size_t>(ni) * plane,
                    xv + (static_cast<size_t>(ni) * c + channel) * plane,
                    plane * sizeof(float));
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        record([xi, oi, n, c, channel, plane] {
            if (oi->grad.empty() || !xi->requires_grad) return;
            auto& g = ensure_grad(*xi);
            for (int ni = 0; ni < n; ++ni) {
                const float* src = oi->grad.data() + static_cast<size_t>(ni) * plane;
                float* dst = g.data() + (static_cast<size_t>(ni) * c + channel) * plane;
                for (size_t j = 0; j < plane; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor Tape::softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be NxK");
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: label count does not match batch");
    }
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw Error("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                        " out of range [0, " + std::to_string(k) + ")");
        }
    }
    const float* z = logits.values().data();
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * k);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* row = z + static_cast<size_t>(i) * k;
        float m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
        const double log_denom = std::log(denom);
        for (int j = 0; j < k; ++j) {
            (*probs)[static_cast<size_t>(i) * k + j] =
                static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / denom);
        }
        total += -(static_cast<double>(row[labels[i]]) - m - log_denom);
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / n));
    check_finite(out.values(), "softmax_cross_entropy");

    if (track({&logits})) {
        out.set_requires_grad(true);
        auto zi = logits.impl(), oi = out.impl();
        std::vector<int> labels_copy(labels.begin(), labels.end());
        record([zi, oi, probs, labels_copy, n, k] {
            if (oi->grad.empty() || !zi->requires_grad) return;
            const float scale = oi->grad[0] / static_cast<float>(n);
            auto& g = ensure_grad(*zi);
            for (int i = 0; i < n; ++i) {
                float* grow = g.data() + static_cast<size_t>(i) * k;
                const float* prow = probs->data() + static_cast<size_t>(i) * k;
                for (int j = 0; j < k; ++j) grow[j] += scale * prow[j];
                grow[labels_copy[i]] -= scale;
            }
        });
    }
    return out;
}

Tensor Tape::l2_norm(const Tensor& a) {
    double acc = 0.0;
    for (const float x : a.values()) acc += static_cast<double>(x) * x;
    const double norm = std::sqrt(acc);
    Tensor out = Tensor::scalar(static_cast<float>(norm));
    check_finite(out.values(), "l2_norm");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi, norm] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            const double scale = oi->grad[0] / (norm + 1e-12);
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += static_cast<float>(scale * ai->values[i]);
            }
        });
    }
    return out;
}

Tensor Tape::dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw ShapeError("dot: length mismatch");
    double acc = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]) * bv[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite(out.values(), "dot");
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record([ai, bi, oi] {
            if (oi->grad.empty()) return;
            const float go = oi->grad[0];
            if (ai->requires_grad) {
                auto& g = ensure_grad(*ai);
                for (size_t i = 0; i < g.size(); ++i) g[i] += go * bi->values[i];
            }
            if (bi->requires_grad) {
                auto& g = ensure_grad(*bi);
                for (size_t i = 0; i < g.size(); ++i) g[i] += go * ai->values[i];
            }
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    double acc = 0.0;
    for (const float x : a.values()) acc += x;
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    check_finite(out.values(), "sum");
    if (track({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        record([ai, oi] {
            if (oi->grad.empty() || !ai->requires_grad) return;
            auto& g = ensure_grad(*ai);
            const float go = oi->grad[0];
            for (size_t i = 0; i < g.size(); ++i) g[i] += go;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, const GradCheckOptions& opts) {
    Tensor xc = x.clone();
    xc.set_requires_grad(true);
    Tape tape;
    Tensor loss = f(tape, xc);
    if (loss.numel() != 1) throw Error("grad_check: function must be scalar-valued");
    tape.backward(loss);
    std::vector<float> analytic(x.numel(), 0.0f);
    if (xc.has_grad()) {
        auto g = xc.grad();
        analytic.assign(g.begin(), g.end());
    }

    std::vector<size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), size_t{0});
    Rng rng(opts.seed);
    rng.shuffle(coords);
    const size_t n_check = std::min<size_t>(coords.size(), static_cast<size_t>(opts.max_coords));

    auto eval = [&](const Tensor& point) {
        Tape t;
        t.set_recording(false);
        return static_cast<double>(f(t, point).item());
    };

    double max_rel = 0.0;
    for (size_t ci = 0; ci < n_check; ++ci) {
        const size_t i = coords[ci];
        Tensor xp = x.clone();
        Tensor xm = x.clone();
        xp.values_mut()[i] = static_cast<float>(x.values()[i] + opts.step);
        xm.values_mut()[i] = static_cast<float>(x.values()[i] - opts.step);
        // effective step after float32 rounding of the perturbed coordinates
        const double h_eff =
            static_cast<double>(xp.values()[i]) - static_cast<double>(xm.values()[i]);
        const double fd = (eval(xp) - eval(xm)) / h_eff;
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(fd), opts.denom_floor});
        max_rel = std::max(max_rel, std::fabs(a - fd) / denom);
    }
    return max_rel;
}

}  // namespace ila
