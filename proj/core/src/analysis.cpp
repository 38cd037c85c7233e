#include "ila/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace ila {

namespace {

Tensor sample_view(const Tensor& batch, int i) {
    const size_t m = batch.numel() / static_cast<size_t>(batch.dim(0));
    Shape s = batch.shape();
    s[0] = 1;
    return Tensor::from(std::move(s),
                        std::vector<float>(batch.values().begin() + i * m,
                                           batch.values().begin() + (i + 1) * m));
}

double l2_diff(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

std::vector<Tensor> taps_of(const Model& model, const Tensor& xi) {
    Tape tape;
    NoGradGuard guard(tape);
    std::vector<Tensor> taps;
    model.forward(tape, xi, &taps);
    return taps;
}

}  // namespace

DisturbanceProfile disturbance_profile(const Model& model, const Tensor& x_clean,
                                       const Tensor& x_adv, const Tensor& x_refined,
                                       int targeted_layer) {
    if (x_clean.shape() != x_adv.shape() || x_clean.shape() != x_refined.shape()) {
        throw ShapeError("disturbance_profile: batch shapes disagree");
    }
    const int n = x_clean.dim(0);
    const int t = model.num_taps();

    // per-sample ratios first, reduced in index order afterwards
    std::vector<std::vector<double>> ratio(n);
    parallel_for(n, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            const auto clean = taps_of(model, sample_view(x_clean, i));
            const auto adv = taps_of(model, sample_view(x_adv, i));
            const auto refined = taps_of(model, sample_view(x_refined, i));
            ratio[i].assign(t, -1.0);  // -1 marks a degenerate baseline
            for (int l = 0; l < t; ++l) {
                const double base = l2_diff(adv[l].values(), clean[l].values());
                if (base <= 1e-8) continue;
                ratio[i][l] = l2_diff(refined[l].values(), clean[l].values()) / base;
            }
        }
    });

    DisturbanceProfile p;
    p.source = model.arch();
    p.targeted_layer = targeted_layer;
    p.values.assign(t, 0.0);
    p.excluded.assign(t, 0);
    for (int l = 0; l < t; ++l) {
        double sum = 0.0;
        int included = 0;
        for (int i = 0; i < n; ++i) {
            if (ratio[i][l] < 0.0) {
                ++p.excluded[l];
            } else {
                sum += ratio[i][l];
                ++included;
            }
        }
        if (included == 0) {
            throw Error("disturbance_profile: every sample is degenerate at tap " +
                        std::to_string(l) + " (" + model.tap_names()[l] + ")");
        }
        p.values[l] = sum / included;
    }
    return p;
}

bool has_peak(const std::vector<double>& values, int l) {
    if (l < 0 || l >= static_cast<int>(values.size())) return false;
    if (l > 0 && !(values[l] > values[l - 1])) return false;
    if (l + 1 < static_cast<int>(values.size()) && !(values[l] > values[l + 1])) return false;
    return true;
}

Tensor run_baseline(const Model& model, const Tensor& x, std::span<const int> labels,
                    const AttackConfig& cfg, BaselineKind kind) {
    return kind == BaselineKind::Ifgsm ? ifgsm(model, x, labels, cfg)
                                       : momentum_ifgsm(model, x, labels, cfg);
}

LayerSelection select_layer(const Model& model, const Tensor& x, std::span<const int> labels,
                            const AttackConfig& baseline_cfg, BaselineKind baseline_kind,
                            const AttackConfig& ila_cfg) {
    const Tensor x_adv = run_baseline(model, x, labels, baseline_cfg, baseline_kind);
    LayerSelection sel;
    const int t = model.num_taps();
    sel.profiles.reserve(t);
    for (int l = 0; l < t; ++l) {
        AttackConfig cfg = ila_cfg;
        cfg.target_layer = l;
        cfg.target_channel = -1;
        const IlaOutput refined = ila_attack(model, x, x_adv, labels, cfg);
        sel.profiles.push_back(disturbance_profile(model, x, x_adv, refined.x, l));
    }
    for (int l = t - 1; l >= 0; --l) {
        if (has_peak(sel.profiles[l].values, l)) {
            sel.layer = l;
            return sel;
        }
    }
    // no candidate peaks at itself: take the strongest self-disturbance
    sel.used_fallback = true;
    sel.layer = 0;
    for (int l = 1; l < t; ++l) {
        if (sel.profiles[l].values[l] > sel.profiles[sel.layer].values[sel.layer]) {
            sel.layer = l;
        }
    }
    return sel;
}

std::vector<double> channel_std(const Model& model, const Tensor& images, int layer,
                                int chunk) {
    if (images.ndim() != 4 || images.dim(0) < 1) {
        throw Error("channel_std: empty or malformed image batch");
    }
    const int n = images.dim(0);
    const int channels = model.tap_channels(layer);
    std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
    size_t per_channel_count = 0;

    const size_t m = images.numel() / static_cast<size_t>(n);
    for (int start = 0; start < n; start += chunk) {
        const int count = std::min(chunk, n - start);
        Tensor slice = Tensor::from(
            {count, images.dim(1), images.dim(2), images.dim(3)},
            std::vector<float>(images.values().begin() + start * m,
                               images.values().begin() + (start + count) * m));
        Tape tape;
        NoGradGuard guard(tape);
        Tensor y = model.forward_to_layer(tape, slice, layer);
        const size_t plane = y.ndim() == 4 ? static_cast<size_t>(y.dim(2)) * y.dim(3) : 1;
        const float* v = y.values().data();
        for (int i = 0; i < count; ++i) {
            for (int c = 0; c < channels; ++c) {
                const float* p = v + (static_cast<size_t>(i) * channels + c) * plane;
                for (size_t j = 0; j < plane; ++j) {
                    sum[c] += p[j];
                    sumsq[c] += static_cast<double>(p[j]) * p[j];
                }
            }
            per_channel_count += plane;
        }
    }
    std::vector<double> out(channels);
    const auto cnt = static_cast<double>(per_channel_count);
    for (int c = 0; c < channels; ++c) {
        const double mean = sum[c] / cnt;
        out[c] = std::sqrt(std::max(0.0, sumsq[c] / cnt - mean * mean));
    }
    return out;
}

std::vector<double> savitzky_golay_coefficients(int window, int degree) {
    if (window < 1 || window % 2 == 0) {
        throw Error("savitzky_golay: window must be a positive odd integer");
    }
    if (degree < 0 || degree >= window) {
        throw Error("savitzky_golay: degree must be in [0, window)");
    }
    const int h = window / 2;
    const int d = degree + 1;
    // normal equations G z = e0 with G[p][q] = sum_i i^(p+q)
    std::vector<std::vector<double>> g(d, std::vector<double>(d + 1, 0.0));
    for (int p = 0; p < d; ++p) {
        for (int q = 0; q < d; ++q) {
            double acc = 0.0;
            for (int i = -h; i <= h; ++i) acc += std::pow(static_cast<double>(i), p + q);
            g[p][q] = acc;
        }
    }
    g[0][d] = 1.0;  // e0
    // Gaussian elimination with partial pivoting on the (d x d+1) system
    for (int col = 0; col < d; ++col) {
        int pivot = col;
        for (int r = col + 1; r < d; ++r) {
            if (std::fabs(g[r][col]) > std::fabs(g[pivot][col])) pivot = r;
        }
        std::swap(g[col], g[pivot]);
        if (g[col][col] == 0.0) throw Error("savitzky_golay: singular normal equations");
        for (int r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = g[r][col] / g[col][col];
            for (int c = col; c <= d; ++c) g[r][c] -= f * g[col][c];
        }
    }
    std::vector<double> z(d);
    for (int p = 0; p < d; ++p) z[p] = g[p][d] / g[p][p];

    std::vector<double> w(window);
    for (int i = -h; i <= h; ++i) {
        double acc = 0.0;
        for (int p = 0; p < d; ++p) acc += z[p] * std::pow(static_cast<double>(i), p);
        w[i + h] = acc;
    }
    return w;
}

std::vector<double> savitzky_golay(std::span<const double> series, int window, int degree) {
    if (static_cast<int>(series.size()) < window) {
        throw Error("savitzky_golay: series shorter than window");
    }
    const std::vector<double> w = savitzky_golay_coefficients(window, degree);
    const int h = window / 2;
    const int n = static_cast<int>(series.size());
    auto mirror = [n](int idx) {
        if (idx < 0) idx = -idx;
        if (idx >= n) idx = 2 * (n - 1) - idx;
        return idx;
    };
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int o = -h; o <= h; ++o) acc += w[o + h] * series[mirror(i + o)];
        out[i] = acc;
    }
    return out;
}

namespace {

// average ranks (1-based), ties share the mean of their positions
std::vector<double> average_ranks(std::span<const double> v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double rank_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw Error("rank_correlation: inputs must have equal length >= 2");
    }
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) {
        throw Error("rank_correlation: zero variance in ranks");
    }
    return cov / std::sqrt(va * vb);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string profile_csv(const DisturbanceProfile& profile) {
    std::ostringstream ss;
    ss << "layer,f\n";
    for (size_t l = 0; l < profile.values.size(); ++l) {
        ss << l << ',' << format_double(profile.values[l]) << '\n';
    }
    return ss.str();
}

std::string channels_csv(std::span<const int> channels, std::span<const double> stds,
                         std::span<const double> transfer_error,
                         std::span<const double> smoothed_std) {
    if (channels.size() != stds.size() || stds.size() != transfer_error.size() ||
        stds.size() != smoothed_std.size()) {
        throw Error("channels_csv: column lengths disagree");
    }
    std::ostringstream ss;
    ss << "channel,std,transfer_error,smoothed_std\n";
    for (size_t r = 0; r < channels.size(); ++r) {
        ss << channels[r] << ',' << format_double(stds[r]) << ',' << format_double(transfer_error[r])
           << ',' << format_double(smoothed_std[r]) << '\n';
    }
    return ss.str();
}

}  // namespace ila
