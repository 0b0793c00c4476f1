#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tvlab {

// Thrown for user-facing problems (bad config, impossible request, corrupt
// file). Internal invariant violations use check() below.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// ---------------------------------------------------------------------------
// Hashing: FNV-1a 64-bit. Used for content addressing (cache keys, checkpoint
// hashes), not security.
// ---------------------------------------------------------------------------

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
    return fnv1a64_bytes(s.data(), s.size(), h);
}

uint64_t hash_file(const std::filesystem::path& path);
std::string hash_hex(uint64_t h);

// ---------------------------------------------------------------------------
// Rng: deterministic across platforms. std::mt19937_64 has a pinned output
// sequence, but the std <random> distributions do not, so the distributions
// are implemented here on top of the raw engine.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, bound), rejection sampled
    uint64_t uniform(uint64_t bound) {
        check(bound > 0, "Rng::uniform: bound must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    size_t index(size_t n) { return static_cast<size_t>(uniform(n)); }

    // uniform in [0, 1)
    double real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller (deterministic, cached spare)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = real();
        } while (u1 <= 0.0);
        u2 = real();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    // k distinct indices from [0, n), order of first draw
    std::vector<size_t> sample_without_replacement(size_t n, size_t k);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Derives an independent seed for a named stream, e.g.
// derive_seed(seed, "dataset", task_name).
uint64_t derive_seed(uint64_t seed, std::string_view a, std::string_view b = {},
                     uint64_t n = 0);

// ---------------------------------------------------------------------------
// Parallelism: index-keyed parallel loop. Each index is processed by exactly
// one worker; callers store results into per-index slots so the outcome does
// not depend on the worker count.
// ---------------------------------------------------------------------------

// Worker count: 0 means hardware concurrency.
void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& fn);

// ---------------------------------------------------------------------------
// Filesystem helpers
// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);
std::vector<unsigned char> read_binary_file(const std::filesystem::path& path);

// Writes via temp-file-then-rename so readers never observe partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
void write_file_atomic(const std::filesystem::path& path, const void* data, size_t n);

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

// Locale-independent float formatting for CSV/SVG output.
std::string fmt_double(double v);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace tvlab
