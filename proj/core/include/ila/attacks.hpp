#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ila/zoo.hpp"

namespace ila {

struct AttackConfig {
    double epsilon = 0.03;       // L-inf radius in normalized [-1,1] units
    double step_size = 0.002;    // sign-step scale; the refinement stage uses 1.0
    int iterations = 20;
    double alpha = 3.0;          // disturbance-magnitude weight in the ILA loss
    int target_layer = 0;        // tap index
    int target_channel = -1;     // -1 = whole layer
    double momentum_decay = 1.0;

    void validate() const;  // epsilon > 0, iterations >= 0, alpha >= 0
};

// Untargeted I-FGSM: x <- clip(x + step * sign(d CE / dx)), per sample,
// clipped to the epsilon ball around the clean input and to [-1,1] after
// every iteration.
Tensor ifgsm(const Model& model, const Tensor& x, std::span<const int> labels,
             const AttackConfig& cfg);

// I-FGSM with an accumulated L1-normalized gradient direction:
// g <- mu*g + grad/||grad||_1, step along sign(g).
Tensor momentum_ifgsm(const Model& model, const Tensor& x, std::span<const int> labels,
                      const AttackConfig& cfg);

// The refinement objective:
//   alpha * ||d_cur|| / ||d_ref||  +  (d_cur / ||d_cur||) . (d_ref / ||d_ref||)
// d_ref is treated as a constant (no gradient flows into it).
// Throws DegenerateBaselineError when ||d_ref|| <= 1e-8 and
// DegenerateCurrentError when ||d_cur|| <= 1e-12.
Tensor ila_loss(Tape& tape, const Tensor& d_ref, const Tensor& d_cur, double alpha);

struct IlaOutput {
    Tensor x;                        // refined adversarial batch
    std::vector<char> degenerate;    // per sample: baseline feature diff ~ 0, passed through
    int degenerate_count = 0;
    int early_stopped = 0;           // current feature diff collapsed mid-run (kept iterate)
    // per-sample objective values; degenerate entries hold 0
    std::vector<double> initial_loss;
    std::vector<double> final_loss;
};

// Fine-tunes x_adv by gradient ascent on ila_loss at tap cfg.target_layer
// (restricted to cfg.target_channel when set), raw gradient scaled by
// cfg.step_size, same clipping as the baselines. The clean-input features and
// the baseline feature difference are computed once and reused.
IlaOutput ila_attack(const Model& model, const Tensor& x_clean, const Tensor& x_adv,
                     std::span<const int> labels, const AttackConfig& cfg);

// ila_attack on a single channel's activation slice; validates the channel
// against the tap's channel count.
IlaOutput channel_ila(const Model& model, const Tensor& x_clean, const Tensor& x_adv,
                      std::span<const int> labels, const AttackConfig& cfg);

// On-disk adversarial batch (magic "ILAX").
struct AdversarialBatch {
    int channels = 3, height = 32, width = 32;
    float epsilon = 0.0f;
    std::vector<uint32_t> indices;  // dataset indices
    std::vector<uint8_t> labels;
    Tensor clean;  // N x C x H x W
    Tensor adv;
};

void save_adversarial(const std::string& path, const AdversarialBatch& batch);
AdversarialBatch load_adversarial(const std::string& path);

}  // namespace ila
