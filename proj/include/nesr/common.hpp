#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace nesr {

// Error taxonomy. Shape/extent disagreements raise DimensionError, bad
// configuration raises ConfigError, out-of-range values raise DomainError,
// malformed files raise FormatError (with byte offset when known), and
// misuse of an API raises UsageError.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::uint64_t offset)
        : Error(msg + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_ = 0;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Mid-run failure (as opposed to a rejected request): maps to exit code 2.
class RuntimeError : public Error {
public:
    explicit RuntimeError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Counter-based deterministic RNG (splitmix64 core). The stream depends only
// on the seed, never on the standard library, so seeded runs replay
// identically across builds and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// FNV-1a, used for config hashes and per-tensor seed derivation.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Worker pool used by the tensor kernels. parallel_for splits [0, n) into
// contiguous chunks; every index is processed by exactly one worker and each
// element's reduction order is fixed, so results are bitwise reproducible
// across runs at a fixed worker count. Strict mode pins the count to 1.
void set_worker_threads(int n);
int worker_threads();
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

// While alive on a thread, parallel_for on that thread runs inline. Used by
// coarse fan-outs (batch members, scene evaluation) whose workers must not
// fight over the kernel pool; per-element math is unchanged either way.
class SerialScope {
public:
    SerialScope();
    ~SerialScope();
    SerialScope(const SerialScope&) = delete;
    SerialScope& operator=(const SerialScope&) = delete;
};

extern const char* const kVersionString;

}  // namespace nesr
