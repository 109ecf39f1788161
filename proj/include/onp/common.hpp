#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace onp {

// Error taxonomy. Every failure mode named by the public contracts maps to
// one of these so callers (and the CLI) can tell misuse from bad data from
// broken files.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};
struct SynthesisError : std::runtime_error {
    explicit SynthesisError(const std::string& msg) : std::runtime_error("synthesis error: " + msg) {}
};
struct DegenerateGraphError : std::runtime_error {
    explicit DegenerateGraphError(const std::string& msg)
        : std::runtime_error("degenerate graph: " + msg) {}
};
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error("load error: " + msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

// Derive an independent stream from (seed, tag) so stages consuming the same
// experiment seed do not share draws.
inline Rng make_rng(uint64_t seed, uint64_t stream) {
    std::seed_seq seq{seed, stream ^ uint64_t{0x9e3779b97f4a7c15}};
    return Rng(seq);
}

template <typename T>
inline T clamp(T v, T lo, T hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

inline bool finite(double v) { return std::isfinite(v); }

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace onp
