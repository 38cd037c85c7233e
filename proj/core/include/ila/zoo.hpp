#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "ila/tensor.hpp"

namespace ila {

// Named parameter; declaration order is the serialization order.
struct Param {
    std::string name;
    Tensor tensor;
};

namespace detail {

// Parameter indices into Model::params(); blocks never own tensors.
struct ConvLayer {
    int w = -1, b = -1;
    int stride = 1, pad = 0;
};

// convs with interleaved relu, optional trailing max-pool
struct StackBlock {
    std::vector<ConvLayer> convs;
    bool pool = false;
    int pool_k = 2, pool_s = 2;
};

// relu(c2(relu(c1(x))) + skip), skip projected by 1x1 conv when shapes change
struct ResidualBlock {
    ConvLayer c1, c2;
    bool has_proj = false;
    ConvLayer proj;
};

// residual block with a squeeze-excite gate on the branch output
struct SEBlock {
    ConvLayer c1, c2;
    bool has_proj = false;
    ConvLayer proj;
    int fc1_w = -1, fc1_b = -1;  // C -> C/4
    int fc2_w = -1, fc2_b = -1;  // C/4 -> C
};

// four parallel branches (1x1 / 1x1+3x3 / 1x1+5x5 / pool+1x1) concatenated
struct InceptionBlock {
    ConvLayer b1;
    ConvLayer b2a, b2b;
    ConvLayer b3a, b3b;
    ConvLayer b4;
    bool pool_after = false;
    int pool_k = 2, pool_s = 2;
};

struct GapBlock {};

using Block = std::variant<StackBlock, ResidualBlock, SEBlock, InceptionBlock, GapBlock>;

}  // namespace detail

extern const std::vector<std::string> kArchNames;  // the four buildable archs

// A small CNN classifier over 3x32x32 inputs with T tappable block outputs.
// Tap l is the post-activation output of block l; the final linear classifier
// is never a tap. Copies share parameter storage.
class Model {
public:
    // Deterministic He fan-in initialization: weights drawn in declaration
    // order from Rng(seed), biases zero. Throws on unknown arch.
    static Model build(const std::string& arch, uint64_t seed);

    const std::string& arch() const { return arch_; }
    uint64_t init_seed() const { return seed_; }

    int num_taps() const { return static_cast<int>(blocks_.size()); }
    const std::vector<std::string>& tap_names() const { return tap_names_; }
    int tap_channels(int layer) const;
    int num_classes() const;

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    void set_params_requires_grad(bool v);
    void zero_param_grads();

    // logits N x 10; records every tap into *taps when given
    Tensor forward(Tape& tape, const Tensor& x, std::vector<Tensor>* taps = nullptr) const;

    // F_l(x): runs blocks 0..layer only; differentiable w.r.t. x
    Tensor forward_to_layer(Tape& tape, const Tensor& x, int layer) const;

    // arch + taps + parameter shapes; embedded in checkpoints
    nlohmann::json spec_json() const;

    void save(const std::string& path, const nlohmann::json& metadata) const;
    static Model load(const std::string& path, nlohmann::json* metadata = nullptr);

private:
    Model() = default;
    void validate_input(const Tensor& x) const;
    Tensor run_blocks(Tape& tape, const Tensor& x, int upto, std::vector<Tensor>* taps) const;

    std::string arch_;
    uint64_t seed_ = 0;
    std::vector<Param> params_;
    std::vector<detail::Block> blocks_;
    std::vector<std::string> tap_names_;
    std::vector<int> tap_channels_;
    detail::ConvLayer classifier_;  // linear: w KxD, b K
};

}  // namespace ila
