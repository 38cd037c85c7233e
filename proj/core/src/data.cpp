#include "ila/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace ila {

namespace {
constexpr size_t kRecordBytes = 3073;  // 1 label + 3*32*32 pixels
constexpr size_t kImageBytes = 3072;
}  // namespace

Dataset load_cifar10_batch(const std::string& path, const std::string& split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset batch: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % kRecordBytes != 0) {
        throw IoError("batch size " + std::to_string(buf.size()) +
                      " is not a multiple of 3073: " + path);
    }
    const size_t n = buf.size() / kRecordBytes;
    Dataset d;
    d.split = split;
    d.labels.reserve(n);
    d.images.reserve(n * kImageBytes);
    for (size_t i = 0; i < n; ++i) {
        const auto* rec = reinterpret_cast<const uint8_t*>(buf.data()) + i * kRecordBytes;
        if (rec[0] >= 10) {
            throw IoError("label " + std::to_string(rec[0]) + " out of range in record " +
                          std::to_string(i) + " of " + path);
        }
        d.labels.push_back(rec[0]);
        d.images.insert(d.images.end(), rec + 1, rec + kRecordBytes);
    }
    return d;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset train;
    train.split = "train";
    for (int b = 1; b <= 5; ++b) {
        const std::string path = (fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin")).string();
        Dataset part = load_cifar10_batch(path, "train");
        train.images.insert(train.images.end(), part.images.begin(), part.images.end());
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    }
    Dataset test = load_cifar10_batch((fs::path(dir) / "test_batch.bin").string(), "test");
    return {std::move(train), std::move(test)};
}

std::string default_data_dir() {
    const char* v = std::getenv("ILA_DATA_DIR");
    return v ? v : "";
}

float normalize_byte(uint8_t x) {
    return (static_cast<float>(x) / 255.0f - 0.5f) / 0.5f;
}

uint8_t denormalize_value(float y) {
    const float x = (y * 0.5f + 0.5f) * 255.0f;
    const long r = std::lround(x);
    return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

Tensor normalize(std::span<const uint8_t> bytes, Shape shape) {
    if (bytes.size() != shape_numel(shape)) {
        throw ShapeError("byte count " + std::to_string(bytes.size()) +
                         " does not match shape " + shape_str(shape));
    }
    std::vector<float> v(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) v[i] = normalize_byte(bytes[i]);
    return Tensor::from(std::move(shape), std::move(v));
}

Tensor normalize(const Dataset& d, size_t start, size_t count) {
    if (start + count > d.size()) {
        throw Error("dataset slice [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") exceeds size " +
                    std::to_string(d.size()));
    }
    return normalize(std::span(d.images).subspan(start * kImageBytes, count * kImageBytes),
                     {static_cast<int>(count), 3, 32, 32});
}

std::vector<uint8_t> denormalize(std::span<const float> values) {
    std::vector<uint8_t> out(values.size());
    for (size_t i = 0; i < values.size(); ++i) out[i] = denormalize_value(values[i]);
    return out;
}

std::vector<int> label_slice(const Dataset& d, size_t start, size_t count) {
    if (start + count > d.size()) {
        throw Error("label slice exceeds dataset size");
    }
    return std::vector<int>(d.labels.begin() + static_cast<long>(start),
                            d.labels.begin() + static_cast<long>(start + count));
}

namespace {

// One smooth per-channel Gaussian blob field: a coarse grid of normal draws
// upsampled bilinearly to 32x32. Writes 3*32*32 floats.
void blob_field(Rng& rng, int grid, float* out) {
    std::vector<double> g(static_cast<size_t>(3) * grid * grid);
    for (auto& v : g) v = rng.normal();
    for (int ch = 0; ch < 3; ++ch) {
        const double* gp = g.data() + static_cast<size_t>(ch) * grid * grid;
        for (int y = 0; y < 32; ++y) {
            const double gy = y * (grid - 1) / 31.0;
            const int y0 = static_cast<int>(gy);
            const int y1 = std::min(y0 + 1, grid - 1);
            const double fy = gy - y0;
            for (int x = 0; x < 32; ++x) {
                const double gx = x * (grid - 1) / 31.0;
                const int x0 = static_cast<int>(gx);
                const int x1 = std::min(x0 + 1, grid - 1);
                const double fx = gx - x0;
                const double v =
                    (1 - fy) * ((1 - fx) * gp[y0 * grid + x0] + fx * gp[y0 * grid + x1]) +
                    fy * ((1 - fx) * gp[y1 * grid + x0] + fx * gp[y1 * grid + x1]);
                out[static_cast<size_t>(ch) * 1024 + y * 32 + x] = static_cast<float>(v);
            }
        }
    }
}

}  // namespace

Dataset synthetic_dataset(uint64_t seed, int n, int k) {
    if (n <= 0 || k <= 0) throw Error("synthetic_dataset: n and k must be positive");
    Rng rng(seed);

    // Each class is the sum of two smooth Gaussian blob fields plus pixel
    // noise (amplitudes in byte units; 1 byte is 2/255 of the normalized
    // range). The coarse template has a fixed sign, so classes stay linearly
    // separable and a small CNN clears 90% within one epoch. The finer
    // texture flips sign per image: it carries label information only
    // through its magnitude, which forces trained models to share nonlinear
    // intermediate features — the regime where refined attacks transfer.
    constexpr int kTemplateGrid = 4;
    constexpr int kTextureGrid = 8;
    constexpr double kTemplateAmp = 16.0;
    constexpr double kTextureAmp = 24.0;
    constexpr double kNoise = 6.0;

    std::vector<float> templates(static_cast<size_t>(k) * kImageBytes);
    std::vector<float> textures(static_cast<size_t>(k) * kImageBytes);
    for (int c = 0; c < k; ++c)
        blob_field(rng, kTemplateGrid, templates.data() + static_cast<size_t>(c) * kImageBytes);
    for (int c = 0; c < k; ++c)
        blob_field(rng, kTextureGrid, textures.data() + static_cast<size_t>(c) * kImageBytes);

    Dataset d;
    d.split = "synthetic";
    d.labels.resize(n);
    d.images.resize(static_cast<size_t>(n) * kImageBytes);
    for (int i = 0; i < n; ++i) {
        const int label = i % k;
        d.labels[i] = static_cast<uint8_t>(label);
        const float* pat = templates.data() + static_cast<size_t>(label) * kImageBytes;
        const float* tex = textures.data() + static_cast<size_t>(label) * kImageBytes;
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        uint8_t* img = d.images.data() + static_cast<size_t>(i) * kImageBytes;
        for (size_t j = 0; j < kImageBytes; ++j) {
            const double v =
                128.0 + kTemplateAmp * pat[j] + kTextureAmp * sign * tex[j] + kNoise * rng.normal();
            img[j] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return d;
}

}  // namespace ila
