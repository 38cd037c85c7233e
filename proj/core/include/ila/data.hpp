#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ila/tensor.hpp"

namespace ila {

// Raw byte images; normalization to the model input domain is explicit.
struct Dataset {
    std::vector<uint8_t> images;  // N x 3 x 32 x 32, row-major, [0,255]
    std::vector<uint8_t> labels;  // N, values 0..9
    std::string split;

    size_t size() const { return labels.size(); }
};

// Reads the six standard binary batches (data_batch_1..5.bin, test_batch.bin)
// of 3073-byte records: 1 label byte + 1024 R + 1024 G + 1024 B.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Single batch file -> Dataset; shared by load_cifar10 and fixtures.
Dataset load_cifar10_batch(const std::string& path, const std::string& split);

// value of the ILA_DATA_DIR environment variable, or "" when unset
std::string default_data_dir();

// y = (x/255 - 0.5)/0.5, exactly; maps 0 -> -1 and 255 -> +1
float normalize_byte(uint8_t x);
uint8_t denormalize_value(float y);  // nearest byte, clamped

Tensor normalize(std::span<const uint8_t> bytes, Shape shape);
// slice [start, start+count) of a dataset -> count x 3 x 32 x 32
Tensor normalize(const Dataset& d, size_t start, size_t count);
std::vector<uint8_t> denormalize(std::span<const float> values);

std::vector<int> label_slice(const Dataset& d, size_t start, size_t count);

// Class-conditional smooth random patterns plus Gaussian pixel noise,
// balanced labels (i mod k). Deterministic in seed; separable enough that a
// small CNN exceeds 90% accuracy within an epoch, while the per-pixel
// pattern amplitude stays comparable to the attack budgets under study.
Dataset synthetic_dataset(uint64_t seed, int n, int k);

}  // namespace ila
