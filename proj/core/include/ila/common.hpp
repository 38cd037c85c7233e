#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ila {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf escaped an operation; values are required to stay finite.
class NumericsError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// ||F_l(X') - F_l(X)||_2 below threshold: the refinement objective is
// undefined for this sample.
class DegenerateBaselineError : public Error {
public:
    using Error::Error;
};

class DegenerateCurrentError : public Error {
public:
    using Error::Error;
};

// Deterministic RNG. mt19937_64 supplies the bits; uniform/normal are
// derived by hand so streams do not depend on libstdc++ distribution
// internals and stay bit-stable across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, pair cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // [0, n), unbiased via rejection
    uint64_t uniform_int(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Thread cap for data-parallel loops; reads ILA_THREADS once, defaults to
// hardware concurrency.
int thread_cap();

// Splits [0, n) into contiguous chunks and runs them on up to thread_cap()
// threads. Work partitioning is fixed by n alone, and callers only write to
// disjoint ranges, so results do not depend on the thread count. Nested
// calls run inline on the caller's thread.
void parallel_for(int n, const std::function<void(int, int)>& body);

// Writes content to a temporary file in the target directory, then renames.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace ila
