#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ila/data.hpp"
#include "ila/zoo.hpp"

namespace ila {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    uint64_t seed = 0;
    size_t train_subset = 0;  // 0 = whole dataset

    void validate() const;  // throws on negative epochs, non-positive batch/lr
};

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;  // train accuracy over the epoch's batches
};

// SGD with momentum: v <- mu*v + g + wd*w, then w <- w - lr*v.
// Velocity buffers persist for the lifetime of the optimizer.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Param>& params, double lr, double momentum, double weight_decay);

    // missing gradients count as zero; shape mismatches throw
    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Param>& params_;
    std::vector<std::vector<float>> velocity_;
    double lr_, momentum_, weight_decay_;
};

// Shuffled mini-batch SGD over the byte dataset; deterministic in cfg.seed.
// Throws NumericsError when the loss stops being finite.
std::vector<EpochStats> train_model(Model& model, const Dataset& data, const TrainConfig& cfg);

// Mean argmax-match rate, evaluated in inference mode in fixed-size chunks.
// Argmax ties resolve to the lowest class index.
double evaluate_accuracy(const Model& model, const Tensor& images, std::span<const int> labels,
                         int chunk = 256);

// Per-sample predicted classes (lowest-index tie-break).
std::vector<int> predict(const Model& model, const Tensor& images, int chunk = 256);

}  // namespace ila
