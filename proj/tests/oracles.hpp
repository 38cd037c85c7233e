#pragma once

// Reference implementations used only by tests. Everything here is the
// plainest possible nested loop so results can be trusted by inspection;
// the library is then required to match these, not the other way around.

#include <cmath>
#include <span>
#include <vector>

namespace oracle {

struct Dims4 {
    int n, c, h, w;
};

inline float& at4(std::vector<float>& v, Dims4 d, int n, int c, int y, int x) {
    return v[((static_cast<size_t>(n) * d.c + c) * d.h + y) * d.w + x];
}

inline float at4(const std::vector<float>& v, Dims4 d, int n, int c, int y, int x) {
    return v[((static_cast<size_t>(n) * d.c + c) * d.h + y) * d.w + x];
}

// cross-correlation, NCHW input, OIHW weight
inline std::vector<float> conv2d(const std::vector<float>& in, Dims4 di,
                                 const std::vector<float>& w, int co, int kh, int kw,
                                 const std::vector<float>& bias, int stride, int pad,
                                 int* ho_out = nullptr, int* wo_out = nullptr) {
    const int ho = (di.h + 2 * pad - kh) / stride + 1;
    const int wo = (di.w + 2 * pad - kw) / stride + 1;
    if (ho_out) *ho_out = ho;
    if (wo_out) *wo_out = wo;
    Dims4 dw{co, di.c, kh, kw};
    Dims4 dout{di.n, co, ho, wo};
    std::vector<float> out(static_cast<size_t>(di.n) * co * ho * wo);
    for (int n = 0; n < di.n; ++n)
        for (int o = 0; o < co; ++o)
            for (int yo = 0; yo < ho; ++yo)
                for (int xo = 0; xo < wo; ++xo) {
                    double acc = bias[o];
                    for (int i = 0; i < di.c; ++i)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int y = yo * stride - pad + ky;
                                const int x = xo * stride - pad + kx;
                                if (y < 0 || y >= di.h || x < 0 || x >= di.w) continue;
                                acc += static_cast<double>(at4(in, di, n, i, y, x)) *
                                       at4(w, dw, o, i, ky, kx);
                            }
                    at4(out, dout, n, o, yo, xo) = static_cast<float>(acc);
                }
    return out;
}

inline std::vector<float> maxpool2d(const std::vector<float>& in, Dims4 di, int k,
                                    int stride, int pad = 0) {
    const int ho = (di.h + 2 * pad - k) / stride + 1;
    const int wo = (di.w + 2 * pad - k) / stride + 1;
    Dims4 dout{di.n, di.c, ho, wo};
    std::vector<float> out(static_cast<size_t>(di.n) * di.c * ho * wo);
    for (int n = 0; n < di.n; ++n)
        for (int c = 0; c < di.c; ++c)
            for (int yo = 0; yo < ho; ++yo)
                for (int xo = 0; xo < wo; ++xo) {
                    float best = -1e30f;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int y = yo * stride - pad + dy;
                            const int x = xo * stride - pad + dx;
                            if (y < 0 || y >= di.h || x < 0 || x >= di.w) continue;
                            best = std::max(best, at4(in, di, n, c, y, x));
                        }
                    at4(out, dout, n, c, yo, xo) = best;
                }
    return out;
}

inline std::vector<float> avgpool2d(const std::vector<float>& in, Dims4 di, int k,
                                    int stride, int pad = 0) {
    const int ho = (di.h + 2 * pad - k) / stride + 1;
    const int wo = (di.w + 2 * pad - k) / stride + 1;
    Dims4 dout{di.n, di.c, ho, wo};
    std::vector<float> out(static_cast<size_t>(di.n) * di.c * ho * wo);
    for (int n = 0; n < di.n; ++n)
        for (int c = 0; c < di.c; ++c)
            for (int yo = 0; yo < ho; ++yo)
                for (int xo = 0; xo < wo; ++xo) {
                    double acc = 0.0;
                    int count = 0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            const int y = yo * stride - pad + dy;
                            const int x = xo * stride - pad + dx;
                            if (y < 0 || y >= di.h || x < 0 || x >= di.w) continue;
                            acc += at4(in, di, n, c, y, x);
                            ++count;
                        }
                    at4(out, dout, n, c, yo, xo) = static_cast<float>(acc / count);
                }
    return out;
}

// logits NxK -> mean over batch of -log softmax[label]
inline double cross_entropy(const std::vector<float>& logits, int n, int k,
                            std::span<const int> labels) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.data() + static_cast<size_t>(i) * k;
        double m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(row[j] - m);
        total += -(row[labels[i]] - m - std::log(denom));
    }
    return total / n;
}

inline std::vector<float> linear(const std::vector<float>& in, int n, int d,
                                 const std::vector<float>& w, int k,
                                 const std::vector<float>& bias) {
    std::vector<float> out(static_cast<size_t>(n) * k);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            double acc = bias[j];
            for (int p = 0; p < d; ++p)
                acc += static_cast<double>(in[static_cast<size_t>(i) * d + p]) *
                       w[static_cast<size_t>(j) * d + p];
            out[static_cast<size_t>(i) * k + j] = static_cast<float>(acc);
        }
    return out;
}

inline double l2_norm(std::span<const float> v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

}  // namespace oracle
