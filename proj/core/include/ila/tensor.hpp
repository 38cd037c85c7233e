#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ila/common.hpp"

namespace ila {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // empty until backward touches this tensor
    bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float32 tensor. Copies share storage; ops always
// allocate fresh outputs, so shared handles never alias mid-computation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    size_t numel() const { return impl_->values.size(); }

    std::span<const float> values() const { return impl_->values; }
    std::span<float> values_mut() { return impl_->values; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const float> grad() const;
    void set_grad(std::vector<float> grad);
    void zero_grad();

    // scalar access; throws unless numel() == 1
    float item() const;

    // deep copy of values (no grad, no tape linkage)
    Tensor clone() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

enum class PoolMode { Max, Avg };

// Ordered record of executed operations. Ops append their backward rule as
// they run, so the record is topological by construction. A tape drives a
// single backward pass; recording or replaying after that throws.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- elementwise ----
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);
    Tensor scalar_mul(const Tensor& a, float s);
    Tensor relu(const Tensor& a);                      // relu'(0) = 0
    Tensor clamp(const Tensor& a, float lo, float hi); // grad 0 outside (lo, hi)
    Tensor sigmoid(const Tensor& a);

    // ---- structured ----
    // input NCHW, weight OIHW, bias O; cross-correlation with given stride/pad
    Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                  int stride, int pad);
    // max backward routes the gradient to the first argmax in scan order
    Tensor pool2d(const Tensor& input, PoolMode mode, int k, int stride);
    // padded variant: padding cells are ignored (max) / excluded from the mean (avg)
    Tensor pool2d_padded(const Tensor& input, PoolMode mode, int k, int stride, int pad);
    Tensor global_avg_pool(const Tensor& input);  // NCHW -> NC
    // input NxD, weight KxD, bias K -> NxK
    Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
    Tensor reshape(const Tensor& a, Shape shape);
    Tensor concat_channels(std::span<const Tensor> parts);       // NCHW along C
    Tensor channel_scale(const Tensor& x, const Tensor& gate);   // gate NC
    Tensor channel_slice(const Tensor& x, int channel);          // NCHW -> N1HW, NC -> N1

    // ---- reductions (float64 accumulators) ----
    // mean over batch of -log softmax(logits)[label], max-subtracted
    Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
    Tensor l2_norm(const Tensor& a);  // backward x / (||x|| + 1e-12)
    Tensor dot(const Tensor& a, const Tensor& b);
    Tensor sum(const Tensor& a);

    // Propagates d(loss)/d(leaf) into every recorded tensor with
    // requires_grad, accumulating additively across fan-out. Single shot.
    void backward(const Tensor& loss);

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }
    bool consumed() const { return consumed_; }
    size_t node_count() const { return nodes_.size(); }
    void reset();

private:
    struct Node {
        std::function<void()> backward;
    };

    // Returns true when the result of an op over these inputs must be
    // recorded (recording on, some input requires grad).
    bool track(std::initializer_list<const Tensor*> inputs) const;
    void record(std::function<void()> fn);

    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

// Scoped recording-off guard for inference-only forwards.
class NoGradGuard {
public:
    explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~NoGradGuard() { tape_.set_recording(prev_); }

private:
    Tape& tape_;
    bool prev_;
};

struct GradCheckOptions {
    double step = 1e-3;
    int max_coords = 24;
    uint64_t seed = 7;
    // relative error denominator is max(|analytic|, |numeric|, floor)
    double denom_floor = 1.0;
};

// Central-difference check of the analytic gradient of a scalar-valued
// tensor function on a sampled coordinate subset. Returns the max relative
// error observed (diagnostic; never throws on mismatch).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, const GradCheckOptions& opts = {});

}  // namespace ila
