#include "ila/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ila {

void TrainConfig::validate() const {
    if (epochs < 0) throw Error("train config: epochs must be non-negative");
    if (batch_size <= 0) throw Error("train config: batch size must be positive");
    if (lr <= 0.0) throw Error("train config: learning rate must be positive");
    if (momentum < 0.0 || weight_decay < 0.0) {
        throw Error("train config: momentum and weight decay must be non-negative");
    }
}

SgdOptimizer::SgdOptimizer(std::vector<Param>& params, double lr, double momentum,
                           double weight_decay)
    : params_(params), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        velocity_[i].assign(params[i].tensor.numel(), 0.0f);
    }
}

void SgdOptimizer::step() {
    if (velocity_.size() != params_.size()) {
        throw Error("optimizer parameter list changed size");
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        auto w = t.values_mut();
        auto& v = velocity_[i];
        if (v.size() != w.size()) {
            throw ShapeError("optimizer buffer does not match parameter " + params_[i].name);
        }
        const bool has_grad = t.has_grad();
        if (has_grad && t.grad().size() != w.size()) {
            throw ShapeError("gradient does not match parameter " + params_[i].name);
        }
        const float* g = has_grad ? t.grad().data() : nullptr;
        const auto mu = static_cast<float>(momentum_);
        const auto wd = static_cast<float>(weight_decay_);
        const auto lr = static_cast<float>(lr_);
        for (size_t j = 0; j < w.size(); ++j) {
            const float grad = (g ? g[j] : 0.0f) + wd * w[j];
            v[j] = mu * v[j] + grad;
            w[j] -= lr * v[j];
        }
    }
}

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

// gather a batch of images/labels by dataset index
Tensor gather_images(const Dataset& d, std::span<const size_t> idx) {
    constexpr size_t kImageBytes = 3072;
    std::vector<uint8_t> bytes(idx.size() * kImageBytes);
    for (size_t i = 0; i < idx.size(); ++i) {
        const uint8_t* src = d.images.data() + idx[i] * kImageBytes;
        std::copy(src, src + kImageBytes, bytes.data() + i * kImageBytes);
    }
    return normalize(bytes, {static_cast<int>(idx.size()), 3, 32, 32});
}

int argmax_row(const float* row, int k) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;  // strict: ties keep the lowest index
    }
    return best;
}

}  // namespace

std::vector<EpochStats> train_model(Model& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw Error("train: empty dataset");
    const size_t n = (cfg.train_subset > 0 && cfg.train_subset < data.size())
                         ? cfg.train_subset
                         : data.size();

    model.set_params_requires_grad(true);
    SgdOptimizer opt(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    std::vector<EpochStats> history;
    history.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < n; start += cfg.batch_size) {
            const size_t count = std::min<size_t>(cfg.batch_size, n - start);
            const std::span<const size_t> idx(order.data() + start, count);
            Tensor x = gather_images(data, idx);
            std::vector<int> labels(count);
            for (size_t i = 0; i < count; ++i) labels[i] = data.labels[idx[i]];

            Tape tape;
            opt.zero_grad();
            Tensor logits = model.forward(tape, x);
            Tensor loss = tape.softmax_cross_entropy(logits, labels);
            const double loss_v = loss.item();
            if (!std::isfinite(loss_v)) {
                throw NumericsError("training diverged: non-finite loss at epoch " +
                                    std::to_string(epoch) + ", sample offset " +
                                    std::to_string(start));
            }
            tape.backward(loss);
            opt.step();

            loss_sum += loss_v * static_cast<double>(count);
            const float* lv = logits.values().data();
            const int k = logits.dim(1);
            for (size_t i = 0; i < count; ++i) {
                if (argmax_row(lv + i * k, k) == labels[i]) ++correct;
            }
        }
        history.push_back({loss_sum / static_cast<double>(n),
                           static_cast<double>(correct) / static_cast<double>(n)});
    }
    return history;
}

std::vector<int> predict(const Model& model, const Tensor& images, int chunk) {
    if (images.ndim() != 4) throw ShapeError("predict: images must be NCHW");
    const int n = images.dim(0);
    const size_t sample = images.numel() / static_cast<size_t>(n);
    std::vector<int> out(n);
    for (int start = 0; start < n; start += chunk) {
        const int count = std::min(chunk, n - start);
        Tensor x = Tensor::from({count, images.dim(1), images.dim(2), images.dim(3)},
                                std::vector<float>(
                                    images.values().begin() + start * sample,
                                    images.values().begin() + (start + count) * sample));
        Tape tape;
        NoGradGuard guard(tape);
        Tensor logits = model.forward(tape, x);
        const float* lv = logits.values().data();
        const int k = logits.dim(1);
        for (int i = 0; i < count; ++i) {
            out[start + i] = argmax_row(lv + static_cast<size_t>(i) * k, k);
        }
    }
    return out;
}

double evaluate_accuracy(const Model& model, const Tensor& images, std::span<const int> labels,
                         int chunk) {
    if (images.ndim() != 4 || static_cast<size_t>(images.dim(0)) != labels.size()) {
        throw ShapeError("evaluate_accuracy: image batch and label count disagree");
    }
    const std::vector<int> pred = predict(model, images, chunk);
    size_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (pred[i] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace ila
