#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "onp/common.hpp"
#include "onp/tensor.hpp"

namespace onp {

// Labeled image set, CHW float pixels in [0,1].
struct Dataset {
    int channels = 3;
    int height = 32;
    int width = 32;
    std::vector<float> images;  // n * channels * height * width
    std::vector<int> labels;
    int num_classes = 10;

    int size() const { return static_cast<int>(labels.size()); }
    size_t image_size() const { return static_cast<size_t>(channels) * height * width; }

    const float* image(int i) const { return images.data() + static_cast<size_t>(i) * image_size(); }
    float* image(int i) { return images.data() + static_cast<size_t>(i) * image_size(); }

    void append(const float* px, int label) {
        images.insert(images.end(), px, px + image_size());
        labels.push_back(label);
    }

    Dataset select(const std::vector<int>& idx) const {
        Dataset out;
        out.channels = channels;
        out.height = height;
        out.width = width;
        out.num_classes = num_classes;
        out.images.reserve(idx.size() * image_size());
        out.labels.reserve(idx.size());
        for (int i : idx) out.append(image(i), labels[static_cast<size_t>(i)]);
        return out;
    }
};

namespace detail {

struct SampleParams {
    float fg[3];
    float bg[3];
    float noise_sigma;
};

inline void contrasting_colors(Rng& rng, SampleParams& p) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (;;) {
        float d2 = 0.0f;
        for (int c = 0; c < 3; ++c) {
            p.fg[c] = u(rng);
            p.bg[c] = u(rng);
            d2 += (p.fg[c] - p.bg[c]) * (p.fg[c] - p.bg[c]);
        }
        if (d2 > 0.36f) return;  // keep figure and ground separable
    }
}

// One 32x32 sample of the given class. Classes are texture/shape families
// with randomized geometry, colors, and pixel noise; separable by a small
// conv net but not by any single pixel.
inline void render_class(int cls, Rng& rng, float* px, int H, int W) {
    SampleParams p{};
    contrasting_colors(rng, p);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::normal_distribution<float> g(0.0f, 1.0f);
    p.noise_sigma = 0.04f + 0.04f * u(rng);

    auto set_px = [&](int y, int x, const float* col) {
        for (int c = 0; c < 3; ++c) px[(c * H + y) * W + x] = col[c];
    };

    const float cx = W * (0.35f + 0.3f * u(rng));
    const float cy = H * (0.35f + 0.3f * u(rng));
    const float period = 4.0f + 5.0f * u(rng);
    const float phase = period * u(rng);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            bool fg = false;
            const float dx = x - cx, dy = y - cy;
            switch (cls) {
                case 0:  // horizontal stripes
                    fg = std::fmod(y + phase, period) < period * 0.5f;
                    break;
                case 1:  // vertical stripes
                    fg = std::fmod(x + phase, period) < period * 0.5f;
                    break;
                case 2:  // diagonal stripes
                    fg = std::fmod(x + y + phase, period) < period * 0.5f;
                    break;
                case 3:  // checkerboard
                    fg = (static_cast<int>((x + phase) / (period * 0.5f)) +
                          static_cast<int>((y + phase) / (period * 0.5f))) % 2 == 0;
                    break;
                case 4:  // filled disk
                    fg = dx * dx + dy * dy < (0.12f + 0.12f * phase / period) * H * W;
                    break;
                case 5: {  // ring
                    const float r = std::sqrt(dx * dx + dy * dy);
                    const float r0 = H * (0.22f + 0.12f * phase / period);
                    fg = std::fabs(r - r0) < 2.5f;
                    break;
                }
                case 6:  // filled rectangle
                    fg = std::fabs(dx) < W * 0.22f && std::fabs(dy) < H * (0.12f + 0.14f * phase / period);
                    break;
                case 7:  // plus cross
                    fg = std::fabs(dx) < 2.5f || std::fabs(dy) < 2.5f;
                    break;
                default:
                    break;
            }
            set_px(y, x, fg ? p.fg : p.bg);
        }
    }
    if (cls == 8) {  // radial color gradient
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float dx = x - cx, dy = y - cy;
                const float t = clamp(std::sqrt(dx * dx + dy * dy) / (0.7f * H), 0.0f, 1.0f);
                for (int c = 0; c < 3; ++c)
                    px[(c * H + y) * W + x] = p.fg[c] * (1.0f - t) + p.bg[c] * t;
            }
    }
    if (cls == 9) {  // coarse random blocks, 4x4 grid
        float block[8][8][3];
        for (auto& row : block)
            for (auto& b : row)
                for (int c = 0; c < 3; ++c) b[c] = u(rng) < 0.5f ? p.fg[c] : p.bg[c];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    px[(c * H + y) * W + x] = block[y * 8 / H][x * 8 / W][c];
    }
    for (int i = 0; i < 3 * H * W; ++i)
        px[i] = clamp(px[i] + p.noise_sigma * g(rng), 0.0f, 1.0f);
}

}  // namespace detail

// Deterministic procedural dataset; same (n, seed) always yields the same
// samples. Classes cycle so every class has either ceil or floor of n/10.
inline Dataset make_synthetic_dataset(int n, uint64_t seed, int num_classes = 10) {
    if (n <= 0) throw ConfigError("synthetic dataset size must be positive");
    Dataset ds;
    ds.num_classes = num_classes;
    ds.images.resize(static_cast<size_t>(n) * ds.image_size());
    ds.labels.resize(static_cast<size_t>(n));
    Rng rng = make_rng(seed, 101);
    for (int i = 0; i < n; ++i) {
        const int cls = i % num_classes;
        ds.labels[static_cast<size_t>(i)] = cls;
        detail::render_class(cls, rng, ds.image(i), ds.height, ds.width);
    }
    return ds;
}

// CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes.
inline Dataset load_cifar10_bin(const std::vector<std::string>& files, int limit = -1) {
    Dataset ds;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw IoError("cannot open " + f);
        std::vector<unsigned char> rec(1 + 3072);
        while (in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()))) {
            ds.labels.push_back(rec[0]);
            for (int i = 0; i < 3072; ++i) ds.images.push_back(rec[1 + i] / 255.0f);
            if (limit > 0 && ds.size() >= limit) return ds;
        }
    }
    if (ds.size() == 0) throw DataError("no CIFAR-10 records read");
    return ds;
}

// Raw tensor-dir format: images.f32 (n*3*32*32 little-endian float) next to
// labels.csv (one integer per line).
inline Dataset load_tensor_dir(const std::string& dir, int limit = -1) {
    namespace fs = std::filesystem;
    Dataset ds;
    std::ifstream lab(fs::path(dir) / "labels.csv");
    if (!lab) throw IoError("cannot open " + dir + "/labels.csv");
    std::string line;
    while (std::getline(lab, line)) {
        if (!line.empty()) ds.labels.push_back(std::stoi(line));
        if (limit > 0 && ds.size() >= limit) break;
    }
    std::ifstream img(fs::path(dir) / "images.f32", std::ios::binary);
    if (!img) throw IoError("cannot open " + dir + "/images.f32");
    ds.images.resize(ds.labels.size() * ds.image_size());
    if (!img.read(reinterpret_cast<char*>(ds.images.data()),
                  static_cast<std::streamsize>(ds.images.size() * sizeof(float))))
        throw DataError("images.f32 shorter than labels.csv implies");
    return ds;
}

inline void save_tensor_dir(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream img(fs::path(dir) / "images.f32", std::ios::binary);
    img.write(reinterpret_cast<const char*>(ds.images.data()),
              static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
    std::ofstream lab(fs::path(dir) / "labels.csv");
    for (int l : ds.labels) lab << l << "\n";
    if (!img || !lab) throw IoError("cannot write dataset to " + dir);
}

// Seeded stratified sample of round(fraction*n) indices, class balanced to
// within one sample per class.
inline std::vector<int> stratified_indices(const Dataset& ds, double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("fraction must be in (0,1]");
    const int want = std::max(1, static_cast<int>(std::lround(fraction * ds.size())));
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[static_cast<size_t>(i)]].push_back(i);
    Rng rng = make_rng(seed, 202);
    std::vector<int> out;
    // round-robin over shuffled per-class pools until the quota is met
    std::vector<std::vector<int>> pools;
    for (auto& [cls, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        pools.push_back(idx);
    }
    size_t depth = 0;
    while (static_cast<int>(out.size()) < want) {
        bool any = false;
        for (auto& pool : pools) {
            if (depth < pool.size()) {
                out.push_back(pool[depth]);
                any = true;
                if (static_cast<int>(out.size()) == want) break;
            }
        }
        if (!any) break;
        ++depth;
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace onp
