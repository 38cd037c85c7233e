#include "ila/data.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ila/common.hpp"

namespace {

using ila::Dataset;

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "ila_data_test";
    std::filesystem::create_directories(dir);
    return dir;
}

// records: label byte + 3072 pixel bytes, pixel value = (record * 7 + i) % 256
void write_batch(const std::filesystem::path& path, const std::vector<uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    for (size_t r = 0; r < labels.size(); ++r) {
        out.put(static_cast<char>(labels[r]));
        for (int i = 0; i < 3072; ++i) {
            out.put(static_cast<char>((r * 7 + static_cast<size_t>(i)) % 256));
        }
    }
}

TEST(Data, LoadBatchReadsLabelsAndPixels) {
    auto path = temp_dir() / "batch_ok.bin";
    write_batch(path, {3, 0, 9});
    Dataset d = ila::load_cifar10_batch(path.string(), "train");
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.split, "train");
    EXPECT_EQ(d.images.size(), 3u * 3072u);
    EXPECT_EQ(d.labels[0], 3);
    EXPECT_EQ(d.labels[2], 9);
    EXPECT_EQ(d.images[0], 0);       // record 0, pixel 0
    EXPECT_EQ(d.images[3072], 7);    // record 1, pixel 0
    EXPECT_EQ(d.images[3072 + 5], 12);
    std::filesystem::remove(path);
}

TEST(Data, LoadBatchRejectsBadRecordSize) {
    auto path = temp_dir() / "batch_bad.bin";
    write_batch(path, {1, 2});
    std::ofstream(path, std::ios::binary | std::ios::app).put(0);  // one stray byte
    EXPECT_THROW(ila::load_cifar10_batch(path.string(), "train"), ila::IoError);
    std::filesystem::remove(path);
}

TEST(Data, LoadBatchRejectsOutOfRangeLabel) {
    auto path = temp_dir() / "batch_label.bin";
    write_batch(path, {1, 10});
    try {
        ila::load_cifar10_batch(path.string(), "train");
        FAIL() << "expected IoError";
    } catch (const ila::IoError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("label"), std::string::npos);
        EXPECT_NE(msg.find(path.string()), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(Data, LoadBatchRejectsMissingFile) {
    EXPECT_THROW(ila::load_cifar10_batch("/nonexistent/batch.bin", "train"), ila::IoError);
}

TEST(Data, LoadCifar10AssemblesSixBatches) {
    auto dir = temp_dir() / "cifar_fixture";
    std::filesystem::create_directories(dir);
    for (int b = 1; b <= 5; ++b) {
        write_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                    {static_cast<uint8_t>(b % 10), 4});
    }
    write_batch(dir / "test_batch.bin", {7, 8, 9});
    auto [train, test] = ila::load_cifar10(dir.string());
    EXPECT_EQ(train.size(), 10u);
    EXPECT_EQ(test.size(), 3u);
    EXPECT_EQ(train.split, "train");
    EXPECT_EQ(test.split, "test");
    EXPECT_EQ(train.labels[0], 1);  // first record of data_batch_1
    EXPECT_EQ(train.labels[2], 2);  // first record of data_batch_2
    EXPECT_EQ(test.labels[2], 9);
    std::filesystem::remove_all(dir);
}

TEST(Data, DefaultDataDirReadsEnvironment) {
    ::setenv("ILA_DATA_DIR", "/tmp/ila_env_probe", 1);
    EXPECT_EQ(ila::default_data_dir(), "/tmp/ila_env_probe");
    ::unsetenv("ILA_DATA_DIR");
    EXPECT_EQ(ila::default_data_dir(), "");
}

TEST(Data, NormalizeByteEndpoints) {
    EXPECT_FLOAT_EQ(ila::normalize_byte(0), -1.0f);
    EXPECT_FLOAT_EQ(ila::normalize_byte(255), 1.0f);
    EXPECT_NEAR(ila::normalize_byte(128), 0.0039216f, 1e-6f);
    for (int b = 0; b < 255; ++b) {
        EXPECT_LT(ila::normalize_byte(static_cast<uint8_t>(b)),
                  ila::normalize_byte(static_cast<uint8_t>(b + 1)));
    }
}

TEST(Data, ByteRoundTripIsExactForAllValues) {
    for (int b = 0; b <= 255; ++b) {
        uint8_t byte = static_cast<uint8_t>(b);
        EXPECT_EQ(ila::denormalize_value(ila::normalize_byte(byte)), byte);
    }
}

TEST(Data, DenormalizeClampsOutOfRange) {
    EXPECT_EQ(ila::denormalize_value(-2.0f), 0);
    EXPECT_EQ(ila::denormalize_value(2.0f), 255);
}

TEST(Data, NormalizeSliceShapesAndValues) {
    Dataset d;
    d.split = "train";
    d.labels = {0, 1, 2, 3};
    d.images.resize(4 * 3072);
    for (size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<uint8_t>(i % 256);

    ila::Tensor x = ila::normalize(d, 1, 2);
    EXPECT_EQ(x.shape(), (ila::Shape{2, 3, 32, 32}));
    auto v = x.values();
    for (size_t i = 0; i < v.size(); ++i) {
        EXPECT_EQ(v[i], ila::normalize_byte(d.images[3072 + i]));
    }
    EXPECT_THROW(ila::normalize(d, 3, 2), ila::Error);
    EXPECT_THROW(ila::normalize(d, 0, 0), ila::Error);
}

TEST(Data, DenormalizeInvertsNormalize) {
    Dataset d = ila::synthetic_dataset(3, 8, 4);
    ila::Tensor x = ila::normalize(d, 0, 8);
    auto bytes = ila::denormalize(x.values());
    ASSERT_EQ(bytes.size(), d.images.size());
    for (size_t i = 0; i < bytes.size(); ++i) ASSERT_EQ(bytes[i], d.images[i]);
}

TEST(Data, LabelSlice) {
    Dataset d;
    d.labels = {5, 6, 7, 8};
    d.images.resize(4 * 3072);
    auto s = ila::label_slice(d, 1, 2);
    EXPECT_EQ(s, (std::vector<int>{6, 7}));
    EXPECT_THROW(ila::label_slice(d, 3, 2), ila::Error);
}

TEST(Data, SyntheticIsDeterministicAndBalanced) {
    Dataset a = ila::synthetic_dataset(9, 100, 10);
    Dataset b = ila::synthetic_dataset(9, 100, 10);
    Dataset c = ila::synthetic_dataset(10, 100, 10);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.images, c.images);
    EXPECT_EQ(a.size(), 100u);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.labels[i], i % 10);
}

TEST(Data, SyntheticClassesDiffer) {
    // same class twice -> same underlying pattern; different class -> different
    Dataset d = ila::synthetic_dataset(4, 40, 4);
    auto mean_image = [&](int cls) {
        std::vector<double> m(3072, 0.0);
        int n = 0;
        for (size_t i = 0; i < d.size(); ++i) {
            if (d.labels[i] != cls) continue;
            for (int j = 0; j < 3072; ++j) m[static_cast<size_t>(j)] += d.images[i * 3072 + static_cast<size_t>(j)];
            ++n;
        }
        for (auto& v : m) v /= n;
        return m;
    };
    auto m0 = mean_image(0);
    auto m1 = mean_image(1);
    double diff = 0.0;
    for (size_t j = 0; j < m0.size(); ++j) diff += std::abs(m0[j] - m1[j]);
    diff /= static_cast<double>(m0.size());
    EXPECT_GT(diff, 2.0);  // class signal well above rounding noise
}

TEST(Data, SyntheticValidatesArguments) {
    EXPECT_THROW(ila::synthetic_dataset(1, 0, 10), ila::Error);
    EXPECT_THROW(ila::synthetic_dataset(1, 10, 0), ila::Error);
}

}  // namespace
