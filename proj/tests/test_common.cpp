#include "ila/common.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <vector>

namespace fs = std::filesystem;

TEST(Rng, DeterministicStream) {
    ila::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
    }
}

TEST(Rng, UniformRange) {
    ila::Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
    }
}

TEST(Rng, UniformMoments) {
    ila::Rng rng(3);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        sum += u;
        sq += u * u;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.5, 5e-3);
    EXPECT_NEAR(var, 1.0 / 12.0, 5e-3);
}

TEST(Rng, NormalMoments) {
    ila::Rng rng(5);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 2e-2);
    EXPECT_NEAR(sq / n, 1.0, 2e-2);
}

TEST(Rng, UniformIntCoversRange) {
    ila::Rng rng(9);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) hits[rng.uniform_int(7)]++;
    for (int h : hits) EXPECT_GT(h, 700);
}

TEST(Rng, ShuffleIsPermutation) {
    ila::Rng rng(11);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    rng.shuffle(v);
    std::vector<bool> seen(50, false);
    for (int x : v) {
        ASSERT_GE(x, 0);
        ASSERT_LT(x, 50);
        EXPECT_FALSE(seen[x]);
        seen[x] = true;
    }
}

TEST(ParallelFor, CoversEveryIndexOnce) {
    std::vector<std::atomic<int>> hits(1000);
    for (auto& h : hits) h = 0;
    ila::parallel_for(1000, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) hits[i]++;
    });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, HandlesSmallAndZero) {
    int count = 0;
    ila::parallel_for(0, [&](int, int) { count = -1; });
    EXPECT_EQ(count, 0);
    ila::parallel_for(1, [&](int lo, int hi) { count += hi - lo; });
    EXPECT_EQ(count, 1);
}

TEST(ParallelFor, NestedCallsRunInline) {
    std::atomic<int> total{0};
    ila::parallel_for(4, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            ila::parallel_for(8, [&](int l2, int h2) { total += h2 - l2; });
        }
    });
    EXPECT_EQ(total.load(), 32);
}

TEST(AtomicWriteFile, RoundTripsAndCreatesDirs) {
    const fs::path dir = fs::temp_directory_path() / "ila_common_test";
    fs::remove_all(dir);
    const fs::path p = dir / "a" / "b.txt";
    ila::atomic_write_file(p.string(), "hello\nworld");
    EXPECT_EQ(ila::read_file(p.string()), "hello\nworld");
    // overwrite in place
    ila::atomic_write_file(p.string(), "second");
    EXPECT_EQ(ila::read_file(p.string()), "second");
    fs::remove_all(dir);
}

TEST(AtomicWriteFile, ReadMissingFileThrows) {
    EXPECT_THROW(ila::read_file("/nonexistent/path/nope.txt"), ila::IoError);
}
