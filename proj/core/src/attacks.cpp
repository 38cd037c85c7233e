#include "ila/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "binio.hpp"

namespace ila {

void AttackConfig::validate() const {
    if (epsilon <= 0.0) throw Error("attack config: epsilon must be positive");
    if (iterations < 0) throw Error("attack config: iterations must be non-negative");
    if (alpha < 0.0) throw Error("attack config: alpha must be non-negative");
    if (step_size <= 0.0) throw Error("attack config: step size must be positive");
    if (momentum_decay < 0.0) throw Error("attack config: momentum decay must be non-negative");
}

namespace {

// Attacks differentiate w.r.t. the input only; freeze parameter gradients for
// the duration of a run and restore the previous flags on exit.
struct FrozenParams {
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, bool>> saved;

    explicit FrozenParams(const Model& m) {
        saved.reserve(m.params().size());
        for (const auto& p : m.params()) {
            auto impl = p.tensor.impl();
            saved.emplace_back(impl, impl->requires_grad);
            impl->requires_grad = false;
        }
    }
    ~FrozenParams() {
        for (auto& [impl, v] : saved) impl->requires_grad = v;
    }
};

size_t sample_numel(const Tensor& batch) {
    return batch.numel() / static_cast<size_t>(batch.dim(0));
}

Tensor sample_view(const Tensor& batch, int i, bool requires_grad = false) {
    const size_t m = sample_numel(batch);
    Shape s = batch.shape();
    s[0] = 1;
    return Tensor::from(std::move(s),
                        std::vector<float>(batch.values().begin() + i * m,
                                           batch.values().begin() + (i + 1) * m),
                        requires_grad);
}

// closed epsilon-ball projection around x0, then image range
void project(std::span<float> x, std::span<const float> x0, double eps) {
    const auto e = static_cast<float>(eps);
    for (size_t j = 0; j < x.size(); ++j) {
        x[j] = std::clamp(x[j], x0[j] - e, x0[j] + e);
        x[j] = std::clamp(x[j], -1.0f, 1.0f);
    }
}

// the AdversarialTriple invariant, enforced after every iteration
void assert_in_ball(std::span<const float> x, std::span<const float> x0, double eps) {
    for (size_t j = 0; j < x.size(); ++j) {
        if (std::fabs(x[j] - x0[j]) > eps + 1e-6 || x[j] < -1.0f || x[j] > 1.0f) {
            throw Error("adversarial iterate escaped the epsilon ball or image range");
        }
    }
}

// shared driver for the two sign-step baselines
Tensor sign_step_attack(const Model& model, const Tensor& x, std::span<const int> labels,
                        const AttackConfig& cfg, bool use_momentum) {
    cfg.validate();
    if (x.ndim() != 4 || static_cast<size_t>(x.dim(0)) != labels.size()) {
        throw ShapeError("attack: image batch and label count disagree");
    }
    FrozenParams frozen(model);
    const int n = x.dim(0);
    const size_t m = sample_numel(x);
    Tensor out = x.clone();
    float* ov = out.values_mut().data();
    const float* cv = x.values().data();

    parallel_for(n, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            Tensor xi = sample_view(x, i, /*requires_grad=*/true);
            const std::vector<int> label{labels[i]};
            std::vector<float> g_acc(m, 0.0f);
            const std::span<const float> x0(cv + i * m, m);
            for (int it = 0; it < cfg.iterations; ++it) {
                Tape tape;
                Tensor logits = model.forward(tape, xi);
                Tensor loss = tape.softmax_cross_entropy(logits, label);
                tape.backward(loss);
                const auto grad = xi.grad();

                auto xv = xi.values_mut();
                if (use_momentum) {
                    double l1 = 0.0;
                    for (float g : grad) l1 += std::fabs(g);
                    const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
                    const auto mu = static_cast<float>(cfg.momentum_decay);
                    for (size_t j = 0; j < m; ++j) {
                        g_acc[j] = mu * g_acc[j] + static_cast<float>(grad[j] * inv);
                    }
                    for (size_t j = 0; j < m; ++j) {
                        const float s = (g_acc[j] > 0.0f) - (g_acc[j] < 0.0f);
                        xv[j] += static_cast<float>(cfg.step_size) * s;
                    }
                } else {
                    for (size_t j = 0; j < m; ++j) {
                        const float s = (grad[j] > 0.0f) - (grad[j] < 0.0f);
                        xv[j] += static_cast<float>(cfg.step_size) * s;
                    }
                }
                project(xv, x0, cfg.epsilon);
                assert_in_ball(xv, x0, cfg.epsilon);
                xi.zero_grad();
            }
            std::copy(xi.values().begin(), xi.values().end(), ov + i * m);
        }
    });
    return out;
}

double l2(std::span<const float> v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

}  // namespace

Tensor ifgsm(const Model& model, const Tensor& x, std::span<const int> labels,
             const AttackConfig& cfg) {
    return sign_step_attack(model, x, labels, cfg, /*use_momentum=*/false);
}

Tensor momentum_ifgsm(const Model& model, const Tensor& x, std::span<const int> labels,
                      const AttackConfig& cfg) {
    return sign_step_attack(model, x, labels, cfg, /*use_momentum=*/true);
}

Tensor ila_loss(Tape& tape, const Tensor& d_ref, const Tensor& d_cur, double alpha) {
    if (d_ref.numel() != d_cur.numel()) {
        throw ShapeError("ila_loss: feature difference lengths disagree");
    }
    const double r_ref = l2(d_ref.values());
    if (r_ref <= 1e-8) {
        throw DegenerateBaselineError("baseline feature difference has near-zero norm " +
                                      std::to_string(r_ref));
    }
    if (l2(d_cur.values()) <= 1e-12) {
        throw DegenerateCurrentError("current feature difference has near-zero norm");
    }
    // unit reference direction, constant w.r.t. the tape
    std::vector<float> unit(d_ref.numel());
    const auto rv = d_ref.values();
    for (size_t i = 0; i < unit.size(); ++i) {
        unit[i] = static_cast<float>(rv[i] / r_ref);
    }
    const int ref_len = static_cast<int>(unit.size());
    Tensor unit_ref = Tensor::from({ref_len}, std::move(unit));

    Tensor flat_cur = tape.reshape(d_cur, {static_cast<int>(d_cur.numel())});
    Tensor n_cur = tape.l2_norm(flat_cur);
    Tensor magnitude = tape.scalar_mul(n_cur, static_cast<float>(alpha / r_ref));
    Tensor direction = tape.div(tape.dot(flat_cur, unit_ref), n_cur);
    return tape.add(magnitude, direction);
}

namespace {

// feature difference at the configured tap/channel, flattened per sample
Tensor tap_diff(Tape& tape, const Model& model, const Tensor& xi,
                const std::vector<float>& ref_flat, const AttackConfig& cfg) {
    Tensor y = model.forward_to_layer(tape, xi, cfg.target_layer);
    if (cfg.target_channel >= 0) y = tape.channel_slice(y, cfg.target_channel);
    Tensor flat = tape.reshape(y, {static_cast<int>(y.numel())});
    Tensor ref = Tensor::from({static_cast<int>(ref_flat.size())}, ref_flat);
    return tape.sub(flat, ref);
}

std::vector<float> tap_values(const Model& model, const Tensor& xi, const AttackConfig& cfg) {
    Tape tape;
    NoGradGuard guard(tape);
    Tensor y = model.forward_to_layer(tape, xi, cfg.target_layer);
    if (cfg.target_channel >= 0) y = tape.channel_slice(y, cfg.target_channel);
    return {y.values().begin(), y.values().end()};
}

}  // namespace

IlaOutput ila_attack(const Model& model, const Tensor& x_clean, const Tensor& x_adv,
                     std::span<const int> labels, const AttackConfig& cfg) {
    cfg.validate();
    if (x_clean.shape() != x_adv.shape()) {
        throw ShapeError("ila_attack: clean and adversarial batch shapes disagree");
    }
    if (x_clean.ndim() != 4 || static_cast<size_t>(x_clean.dim(0)) != labels.size()) {
        throw ShapeError("ila_attack: image batch and label count disagree");
    }
    if (cfg.target_layer < 0 || cfg.target_layer >= model.num_taps()) {
        throw Error("ila_attack: tap index " + std::to_string(cfg.target_layer) +
                    " out of range [0, " + std::to_string(model.num_taps()) + ")");
    }
    FrozenParams frozen(model);
    const int n = x_clean.dim(0);
    const size_t m = sample_numel(x_clean);

    IlaOutput out;
    out.x = x_adv.clone();
    out.degenerate.assign(n, 0);
    out.initial_loss.assign(n, 0.0);
    out.final_loss.assign(n, 0.0);
    float* ov = out.x.values_mut().data();
    const float* cv = x_clean.values().data();

    std::vector<char> early(n, 0);
    parallel_for(n, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            const Tensor x0i = sample_view(x_clean, i);
            // clean features and the baseline difference, fixed for the run
            const std::vector<float> ref_clean = tap_values(model, x0i, cfg);
            std::vector<float> d_ref = tap_values(model, sample_view(x_adv, i), cfg);
            for (size_t j = 0; j < d_ref.size(); ++j) d_ref[j] -= ref_clean[j];
            const double r_ref = l2(d_ref);
            if (r_ref <= 1e-8) {
                out.degenerate[i] = 1;  // refinement objective undefined; pass through
                continue;
            }
            const Tensor ref_tensor =
                Tensor::from({static_cast<int>(d_ref.size())}, d_ref);

            Tensor xi = sample_view(x_adv, i, /*requires_grad=*/true);
            const std::span<const float> x0(cv + i * m, m);
            {
                Tape tape;
                NoGradGuard guard(tape);
                out.initial_loss[i] =
                    ila_loss(tape, ref_tensor, tap_diff(tape, model, xi, ref_clean, cfg),
                             cfg.alpha)
                        .item();
            }
            for (int it = 0; it < cfg.iterations; ++it) {
                Tape tape;
                Tensor d_cur = tap_diff(tape, model, xi, ref_clean, cfg);
                Tensor loss;
                try {
                    loss = ila_loss(tape, ref_tensor, d_cur, cfg.alpha);
                } catch (const DegenerateCurrentError&) {
                    early[i] = 1;  // keep the last valid iterate
                    break;
                }
                tape.backward(loss);
                const auto grad = xi.grad();
                auto xv = xi.values_mut();
                for (size_t j = 0; j < m; ++j) {
                    xv[j] += static_cast<float>(cfg.step_size) * grad[j];
                }
                project(xv, x0, cfg.epsilon);
                assert_in_ball(xv, x0, cfg.epsilon);
                xi.zero_grad();
            }
            {
                Tape tape;
                NoGradGuard guard(tape);
                out.final_loss[i] =
                    ila_loss(tape, ref_tensor, tap_diff(tape, model, xi, ref_clean, cfg),
                             cfg.alpha)
                        .item();
            }
            std::copy(xi.values().begin(), xi.values().end(), ov + i * m);
        }
    });
    out.degenerate_count = static_cast<int>(
        std::count(out.degenerate.begin(), out.degenerate.end(), char{1}));
    out.early_stopped = static_cast<int>(std::count(early.begin(), early.end(), char{1}));
    return out;
}

IlaOutput channel_ila(const Model& model, const Tensor& x_clean, const Tensor& x_adv,
                      std::span<const int> labels, const AttackConfig& cfg) {
    if (cfg.target_channel < 0) {
        throw Error("channel_ila: target channel not set");
    }
    if (cfg.target_layer < 0 || cfg.target_layer >= model.num_taps()) {
        throw Error("channel_ila: tap index out of range");
    }
    const int channels = model.tap_channels(cfg.target_layer);
    if (cfg.target_channel >= channels) {
        throw Error("channel_ila: channel " + std::to_string(cfg.target_channel) +
                    " out of range [0, " + std::to_string(channels) + ") at tap " +
                    std::to_string(cfg.target_layer));
    }
    return ila_attack(model, x_clean, x_adv, labels, cfg);
}

void save_adversarial(const std::string& path, const AdversarialBatch& batch) {
    const size_t n = batch.indices.size();
    const size_t m = static_cast<size_t>(batch.channels) * batch.height * batch.width;
    if (batch.labels.size() != n || batch.clean.numel() != n * m ||
        batch.adv.numel() != n * m) {
        throw Error("adversarial batch fields disagree on sample count");
    }
    std::string buf;
    buf.append("ILAX", 4);
    binio::put_u32(buf, 1);
    binio::put_u64(buf, n);
    binio::put_u32(buf, static_cast<uint32_t>(batch.channels));
    binio::put_u32(buf, static_cast<uint32_t>(batch.height));
    binio::put_u32(buf, static_cast<uint32_t>(batch.width));
    binio::put_f32(buf, batch.epsilon);
    const float* cv = batch.clean.values().data();
    const float* av = batch.adv.values().data();
    for (size_t i = 0; i < n; ++i) {
        binio::put_u32(buf, batch.indices[i]);
        buf.push_back(static_cast<char>(batch.labels[i]));
        buf.append(reinterpret_cast<const char*>(cv + i * m), m * sizeof(float));
        buf.append(reinterpret_cast<const char*>(av + i * m), m * sizeof(float));
    }
    atomic_write_file(path, buf);
}

AdversarialBatch load_adversarial(const std::string& path) {
    const std::string buf = read_file(path);
    size_t off = 0;
    binio::need(buf, off, 4, "magic");
    if (buf.compare(0, 4, "ILAX") != 0) {
        throw IoError("not an adversarial batch file (bad magic): " + path);
    }
    off += 4;
    const uint32_t version = binio::get_u32(buf, off, "version");
    if (version != 1) {
        throw IoError("unsupported adversarial batch version " + std::to_string(version));
    }
    AdversarialBatch b;
    const uint64_t n = binio::get_u64(buf, off, "count");
    b.channels = static_cast<int>(binio::get_u32(buf, off, "channels"));
    b.height = static_cast<int>(binio::get_u32(buf, off, "height"));
    b.width = static_cast<int>(binio::get_u32(buf, off, "width"));
    b.epsilon = binio::get_f32(buf, off, "epsilon");
    if (b.channels <= 0 || b.height <= 0 || b.width <= 0 || n == 0) {
        throw IoError("adversarial batch header is degenerate: " + path);
    }
    const size_t m = static_cast<size_t>(b.channels) * b.height * b.width;
    std::vector<float> clean(n * m), adv(n * m);
    b.indices.resize(n);
    b.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const std::string what = "sample " + std::to_string(i);
        b.indices[i] = binio::get_u32(buf, off, what);
        binio::need(buf, off, 1, what);
        b.labels[i] = static_cast<uint8_t>(buf[off++]);
        binio::need(buf, off, 2 * m * sizeof(float), what);
        std::memcpy(clean.data() + i * m, buf.data() + off, m * sizeof(float));
        off += m * sizeof(float);
        std::memcpy(adv.data() + i * m, buf.data() + off, m * sizeof(float));
        off += m * sizeof(float);
    }
    const Shape shape{static_cast<int>(n), b.channels, b.height, b.width};
    b.clean = Tensor::from(shape, std::move(clean));
    b.adv = Tensor::from(shape, std::move(adv));
    return b;
}

}  // namespace ila
