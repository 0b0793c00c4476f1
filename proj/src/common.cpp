#include "tvlab/common.hpp"

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace tvlab {

namespace fs = std::filesystem;

void fail(const std::string& msg) { throw Error(msg); }

uint64_t hash_file(const fs::path& path) {
    auto bytes = read_binary_file(path);
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return std::string(buf);
}

std::vector<size_t> Rng::sample_without_replacement(size_t n, size_t k) {
    check(k <= n, "sample_without_replacement: k > n");
    // Floyd's algorithm would be fine too; partial Fisher-Yates keeps the
    // draw order stable which the split/prompt code relies on.
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

uint64_t derive_seed(uint64_t seed, std::string_view a, std::string_view b, uint64_t n) {
    uint64_t h = kFnvOffset;
    h = fnv1a64_bytes(&seed, sizeof(seed), h);
    h = fnv1a64(a, h);
    h = fnv1a64("/", h);
    h = fnv1a64(b, h);
    h = fnv1a64_bytes(&n, sizeof(n), h);
    // A zero seed is legal for mt19937_64 but avoid handing out the
    // all-zero state family.
    return h == 0 ? kFnvPrime : h;
}

void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    size_t w = workers == 0 ? std::thread::hardware_concurrency() : workers;
    if (w == 0) w = 1;
    w = std::min(w, n);
    if (w == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> threads;
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    threads.reserve(w);
    for (size_t t = 0; t < w; ++t) {
        threads.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!failed.exchange(true)) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open file: " + path.string());
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

std::vector<unsigned char> read_binary_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open file: " + path.string());
    in.seekg(0, std::ios::end);
    auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<unsigned char> out(size);
    if (size > 0) in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
    if (!in) fail("short read: " + path.string());
    return out;
}

void write_file_atomic(const fs::path& path, const void* data, size_t n) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("cannot open for write: " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out) fail("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, std::string_view content) {
    write_file_atomic(path, content.data(), content.size());
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace tvlab
