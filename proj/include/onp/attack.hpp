#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "onp/dataset.hpp"

namespace onp {

// Poisoning function: out = (1 - alpha*mask)*image + alpha*mask*pattern.
// mask is per-pixel [H][W] shared across channels; pattern is CHW. All in the
// [0,1] pixel space the datasets use.
struct TriggerSpec {
    std::string name;
    Tensor pattern;  // [C,H,W]
    Tensor mask;     // [H,W], values in [0,1]
    float blend_alpha = 1.0f;
    int target_label = 0;

    void validate(int channels, int h, int w, int num_classes) const {
        if (pattern.shape != std::vector<int>{channels, h, w})
            throw InputError("trigger pattern dims do not match dataset images");
        if (mask.shape != std::vector<int>{h, w}) throw InputError("trigger mask dims mismatch");
        for (float v : mask.data)
            if (v < 0.0f || v > 1.0f) throw InputError("trigger mask values outside [0,1]");
        if (blend_alpha < 0.0f || blend_alpha > 1.0f)
            throw InputError("blend_alpha outside [0,1]");
        if (target_label < 0 || target_label >= num_classes)
            throw InputError("trigger target label out of range");
    }
};

inline void apply_trigger_px(const TriggerSpec& t, const float* in, float* out, int channels,
                             int h, int w) {
    const int hw = h * w;
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < hw; ++i) {
            const float m = t.blend_alpha * t.mask.data[static_cast<size_t>(i)];
            const float v = (1.0f - m) * in[c * hw + i] + m * t.pattern.data[static_cast<size_t>(c) * hw + i];
            out[c * hw + i] = clamp(v, 0.0f, 1.0f);
        }
}

inline Tensor apply_trigger(const Tensor& image, const TriggerSpec& trigger) {
    if (image.ndim() != 3) throw InputError("apply_trigger expects a CHW image");
    trigger.validate(image.dim(0), image.dim(1), image.dim(2),
                     std::max(1, trigger.target_label + 1));
    Tensor out(image.shape);
    apply_trigger_px(trigger, image.ptr(), out.ptr(), image.dim(0), image.dim(1), image.dim(2));
    return out;
}

// Checkerboard corner patch, alpha = 1 (hard paste).
inline TriggerSpec make_badnets_trigger(int size, int pos_y, int pos_x, int target, int channels = 3,
                                        int h = 32, int w = 32) {
    if (pos_y < 0 || pos_x < 0 || pos_y + size > h || pos_x + size > w)
        throw ConfigError("badnets patch out of image bounds");
    TriggerSpec t;
    t.name = "badnets";
    t.pattern = Tensor({channels, h, w});
    t.mask = Tensor({h, w});
    t.blend_alpha = 1.0f;
    t.target_label = target;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            t.mask.at(pos_y + y, pos_x + x) = 1.0f;
            const float v = (y + x) % 2 == 0 ? 1.0f : 0.0f;
            for (int c = 0; c < channels; ++c) t.pattern.at(c, pos_y + y, pos_x + x) = v;
        }
    return t;
}

// Full-image noise blend; pattern drawn once from the seed.
inline TriggerSpec make_blend_trigger(uint64_t pattern_seed, float alpha, int target,
                                      int channels = 3, int h = 32, int w = 32) {
    if (alpha <= 0.0f || alpha > 1.0f) throw ConfigError("blend alpha must be in (0,1]");
    TriggerSpec t;
    t.name = "blend";
    t.pattern = Tensor({channels, h, w});
    t.mask = Tensor({h, w}, 1.0f);
    t.blend_alpha = alpha;
    t.target_label = target;
    Rng rng = make_rng(pattern_seed, 31);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (float& v : t.pattern.data) v = u(rng);
    return t;
}

// Opaque patch pasted from a given image; stands in for a Trojan-style patch.
inline TriggerSpec make_trojan_patch_trigger(const Tensor& patch, int pos_y, int pos_x, int target,
                                             int channels = 3, int h = 32, int w = 32) {
    if (patch.ndim() != 3 || patch.dim(0) != channels)
        throw ConfigError("trojan patch must be CHW with matching channels");
    const int ph = patch.dim(1), pw = patch.dim(2);
    if (pos_y < 0 || pos_x < 0 || pos_y + ph > h || pos_x + pw > w)
        throw ConfigError("trojan patch out of image bounds");
    TriggerSpec t;
    t.name = "trojan";
    t.pattern = Tensor({channels, h, w});
    t.mask = Tensor({h, w});
    t.blend_alpha = 1.0f;
    t.target_label = target;
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
            t.mask.at(pos_y + y, pos_x + x) = 1.0f;
            for (int c = 0; c < channels; ++c)
                t.pattern.at(c, pos_y + y, pos_x + x) = patch.at(c, y, x);
        }
    return t;
}

struct PoisonedDataset {
    Dataset data;                      // triggered + relabeled copies in place
    std::vector<int> poisoned_indices; // sorted index set
    TriggerSpec trigger;
    double poison_rate = 0.0;
};

// Poison a uniform random subset of round(rate*N) samples: trigger applied,
// label shifted to the trigger's target. Clean samples untouched.
inline PoisonedDataset poison_dataset(const Dataset& base, const TriggerSpec& trigger, double rate,
                                      uint64_t seed) {
    if (rate <= 0.0 || rate > 1.0) throw ConfigError("poison rate must be in (0,1]");
    trigger.validate(base.channels, base.height, base.width, base.num_classes);
    const int count = std::max(1, static_cast<int>(std::lround(rate * base.size())));
    std::vector<int> idx(static_cast<size_t>(base.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, 41);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());

    PoisonedDataset out;
    out.data = base;
    out.trigger = trigger;
    out.poison_rate = rate;
    out.poisoned_indices = idx;
    std::vector<float> tmp(base.image_size());
    for (int i : idx) {
        apply_trigger_px(trigger, out.data.image(i), out.data.image(i), base.channels, base.height,
                         base.width);
        out.data.labels[static_cast<size_t>(i)] = trigger.target_label;
    }
    return out;
}

// Backdoor test set: every retained sample triggered and relabeled to the
// target; samples whose true label equals the target are dropped first when
// exclude_target is set (the convention that makes ASR=100% meaningful).
inline Dataset make_backdoor_testset(const Dataset& test, const TriggerSpec& trigger,
                                     bool exclude_target = true) {
    if (test.size() == 0) throw InputError("empty test set");
    trigger.validate(test.channels, test.height, test.width, test.num_classes);
    Dataset out;
    out.channels = test.channels;
    out.height = test.height;
    out.width = test.width;
    out.num_classes = test.num_classes;
    std::vector<float> tmp(test.image_size());
    for (int i = 0; i < test.size(); ++i) {
        if (exclude_target && test.labels[static_cast<size_t>(i)] == trigger.target_label) continue;
        apply_trigger_px(trigger, test.image(i), tmp.data(), test.channels, test.height,
                         test.width);
        out.append(tmp.data(), trigger.target_label);
    }
    if (out.size() == 0) throw DataError("backdoor test set empty after target-class exclusion");
    return out;
}

inline void save_trigger(const TriggerSpec& t, const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    nlohmann::json j;
    j["name"] = t.name;
    j["blend_alpha"] = t.blend_alpha;
    j["target_label"] = t.target_label;
    j["pattern_shape"] = t.pattern.shape;
    j["mask_shape"] = t.mask.shape;
    std::ofstream jf(path + ".json");
    jf << j.dump(2) << "\n";
    std::ofstream bf(path + ".tensors", std::ios::binary);
    bf.write(reinterpret_cast<const char*>(t.pattern.data.data()),
             static_cast<std::streamsize>(t.pattern.numel() * sizeof(float)));
    bf.write(reinterpret_cast<const char*>(t.mask.data.data()),
             static_cast<std::streamsize>(t.mask.numel() * sizeof(float)));
    if (!jf || !bf) throw IoError("cannot write trigger " + path);
}

inline TriggerSpec load_trigger(const std::string& path) {
    std::ifstream jf(path + ".json");
    if (!jf) throw LoadError("missing trigger descriptor " + path + ".json");
    nlohmann::json j;
    try {
        jf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt trigger descriptor: " + std::string(e.what()));
    }
    TriggerSpec t;
    t.name = j["name"].get<std::string>();
    t.blend_alpha = j["blend_alpha"].get<float>();
    t.target_label = j["target_label"].get<int>();
    t.pattern = Tensor(j["pattern_shape"].get<std::vector<int>>());
    t.mask = Tensor(j["mask_shape"].get<std::vector<int>>());
    std::ifstream bf(path + ".tensors", std::ios::binary);
    if (!bf.read(reinterpret_cast<char*>(t.pattern.data.data()),
                 static_cast<std::streamsize>(t.pattern.numel() * sizeof(float))) ||
        !bf.read(reinterpret_cast<char*>(t.mask.data.data()),
                 static_cast<std::streamsize>(t.mask.numel() * sizeof(float))))
        throw LoadError("trigger tensor archive truncated: " + path);
    return t;
}

}  // namespace onp
