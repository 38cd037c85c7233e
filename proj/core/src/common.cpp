#include "ila/common.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace ila {

int thread_cap() {
    static const int cap = [] {
        if (const char* env = std::getenv("ILA_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return cap;
}

namespace {
thread_local bool inside_parallel_region = false;
}

void parallel_for(int n, const std::function<void(int, int)>& body) {
    if (n <= 0) return;
    const int workers = std::min(thread_cap(), n);
    if (workers <= 1 || inside_parallel_region) {
        body(0, n);
        return;
    }
    // chunk layout depends only on n and the cap, not on scheduling
    std::vector<std::thread> threads;
    threads.reserve(workers);
    const int base = n / workers;
    const int extra = n % workers;
    int begin = 0;
    for (int w = 0; w < workers; ++w) {
        const int len = base + (w < extra ? 1 : 0);
        const int end = begin + len;
        threads.emplace_back([&body, begin, end] {
            inside_parallel_region = true;
            body(begin, end);
            inside_parallel_region = false;
        });
        begin = end;
    }
    for (auto& t : threads) t.join();
}

void atomic_write_file(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    static std::atomic<uint64_t> counter{0};
    const fs::path tmp =
        target.parent_path() /
        (target.filename().string() + ".tmp" + std::to_string(counter.fetch_add(1)));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed for " + path);
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace ila
