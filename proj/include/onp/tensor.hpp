#pragma once

#include <cstring>
#include <numeric>
#include <vector>

#include "onp/common.hpp"

namespace onp {

// Dense row-major float tensor. Shapes are small (at most 4-d here), so the
// shape vector lives inline with the data.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {}
    Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& at(int a) { return data[static_cast<size_t>(a)]; }
    float at(int a) const { return data[static_cast<size_t>(a)]; }
    // [a][b] on a 2-d tensor
    float& at(int a, int b) { return data[static_cast<size_t>(a) * shape[1] + b]; }
    float at(int a, int b) const { return data[static_cast<size_t>(a) * shape[1] + b]; }
    // [a][b][c] on a 3-d tensor
    float& at(int a, int b, int c) {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    float at(int a, int b, int c) const {
        return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
    }
    // [a][b][c][d] on a 4-d tensor
    float& at(int a, int b, int c, int d) {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    float at(int a, int b, int c, int d) const {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    void zero() { std::memset(data.data(), 0, data.size() * sizeof(float)); }
    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor& operator*=(float s) {
        for (float& v : data) v *= s;
        return *this;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void fill_normal(Tensor& t, Rng& rng, float mean, float stddev) {
    std::normal_distribution<float> dist(mean, stddev);
    for (float& v : t.data) v = dist(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, float lo, float hi) {
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.data) v = dist(rng);
}

// FNV-1a over raw bytes; used for parameter hashes in training logs and for
// config digests. Stable across runs on the same platform.
inline uint64_t bytes_hash(const void* p, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t tensor_hash(const Tensor& t, uint64_t h = 0xcbf29ce484222325ull) {
    return bytes_hash(t.data.data(), t.data.size() * sizeof(float), h);
}

}  // namespace onp
