#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "onp/nn/ops.hpp"
#include "onp/tensor.hpp"

namespace onp::nn {

enum class LayerKind { conv, linear_as_conv };

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::conv;
    int c_out = 0, c_in = 0, kernel_h = 1, kernel_w = 1;
    int stride = 1, pad = 0;
    bool has_norm = true;  // per-channel affine normalization after the conv
    std::optional<std::string> group_id;
};

struct GroupSpec {
    std::string group_id;
    std::vector<std::string> member_layers;  // forward order; profile uses the last one
    int width = 0;
};

enum class ArchPreset { mini_resnet, tiny_cnn };

inline ArchPreset parse_preset(const std::string& s) {
    if (s == "mini-resnet") return ArchPreset::mini_resnet;
    if (s == "tiny-cnn") return ArchPreset::tiny_cnn;
    throw ConfigError("unknown arch preset: " + s);
}

inline std::string preset_name(ArchPreset p) {
    return p == ArchPreset::mini_resnet ? "mini-resnet" : "tiny-cnn";
}

// Dataflow program interpreted by the executor. Slot 0 is the input batch;
// each op reads in0 (and in1 for add) and writes out.
enum class OpKind { conv, relu, add, global_avg_pool };

struct OpNode {
    OpKind kind;
    int layer = -1;  // conv ops: index into ConvModel::layers
    int in0 = -1, in1 = -1, out = -1;
};

// Channel keep-masks per layer; true = kept. Missing layers default to kept.
struct PruneMask {
    std::map<std::string, std::vector<uint8_t>> entries;

    bool keeps(const std::string& layer, int channel) const {
        auto it = entries.find(layer);
        if (it == entries.end()) return true;
        return it->second[static_cast<size_t>(channel)] != 0;
    }
    bool all_true() const {
        for (auto& [l, v] : entries)
            for (uint8_t k : v)
                if (!k) return false;
        return true;
    }
    int pruned_count() const {
        int n = 0;
        for (auto& [l, v] : entries)
            for (uint8_t k : v)
                if (!k) ++n;
        return n;
    }
};

// A prunable unit is either a residual group (channels pruned across every
// member layer) or a single layer.
struct PruneEntry {
    std::string unit;  // group_id or layer name
    int channel = 0;
    bool operator<(const PruneEntry& o) const {
        return unit != o.unit ? unit < o.unit : channel < o.channel;
    }
    bool operator==(const PruneEntry& o) const { return unit == o.unit && channel == o.channel; }
};

using PruneSet = std::vector<PruneEntry>;

struct ConvModel {
    ArchPreset preset = ArchPreset::mini_resnet;
    int num_classes = 10;
    int input_channels = 3, input_h = 32, input_w = 32;
    std::vector<LayerSpec> layers;
    std::vector<GroupSpec> groups;
    std::map<std::string, Tensor> params;

    // executor program + metadata
    std::vector<OpNode> ops;
    int num_slots = 0;
    int logits_slot = -1;
    std::map<std::string, int> layer_index;          // name -> layers[] index
    std::map<std::string, int> group_stream_slot;    // group id -> post-block output slot
    std::map<int, int> conv_out_slot;                // layer index -> raw conv output slot

    const LayerSpec& layer(const std::string& name) const {
        auto it = layer_index.find(name);
        if (it == layer_index.end()) throw IndexError("unknown layer: " + name);
        return layers[static_cast<size_t>(it->second)];
    }
    bool has_layer(const std::string& name) const { return layer_index.count(name) > 0; }

    const GroupSpec* find_group(const std::string& id) const {
        for (const auto& g : groups)
            if (g.group_id == id) return &g;
        return nullptr;
    }

    // Unit width: group width or layer c_out.
    int unit_width(const std::string& unit) const {
        if (const GroupSpec* g = find_group(unit)) return g->width;
        return layer(unit).c_out;
    }
    bool has_unit(const std::string& unit) const {
        return find_group(unit) != nullptr || layer_index.count(unit) > 0;
    }

    Tensor& param(const std::string& key) {
        auto it = params.find(key);
        if (it == params.end()) throw IndexError("unknown parameter: " + key);
        return it->second;
    }
    const Tensor& param(const std::string& key) const {
        auto it = params.find(key);
        if (it == params.end()) throw IndexError("unknown parameter: " + key);
        return it->second;
    }

    PruneMask full_mask() const {
        PruneMask m;
        for (const auto& l : layers) m.entries[l.name].assign(static_cast<size_t>(l.c_out), 1);
        return m;
    }

    uint64_t params_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, t] : params) {
            h = bytes_hash(name.data(), name.size(), h);
            h = tensor_hash(t, h);
        }
        return h;
    }
};

namespace detail {

inline int add_layer(ConvModel& m, const std::string& name, LayerKind kind, int c_in, int c_out,
                     int k, int stride, int pad, bool norm,
                     const std::optional<std::string>& group) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.c_in = c_in;
    l.c_out = c_out;
    l.kernel_h = l.kernel_w = k;
    l.stride = stride;
    l.pad = pad;
    l.has_norm = norm;
    l.group_id = group;
    m.layers.push_back(l);
    const int idx = static_cast<int>(m.layers.size()) - 1;
    m.layer_index[name] = idx;
    m.params[name + ".weight"] = Tensor({c_out, c_in, k, k});
    if (norm) {
        m.params[name + ".norm_scale"] = Tensor({c_out}, 1.0f);
        m.params[name + ".norm_shift"] = Tensor({c_out});
        m.params[name + ".norm_mean"] = Tensor({c_out});
        m.params[name + ".norm_var"] = Tensor({c_out}, 1.0f);
    } else {
        m.params[name + ".bias"] = Tensor({c_out});
    }
    return idx;
}

inline int emit(ConvModel& m, OpKind kind, int layer, int in0, int in1 = -1) {
    OpNode n;
    n.kind = kind;
    n.layer = layer;
    n.in0 = in0;
    n.in1 = in1;
    n.out = m.num_slots++;
    m.ops.push_back(n);
    if (kind == OpKind::conv) m.conv_out_slot[layer] = n.out;
    return n.out;
}

inline int emit_conv_relu(ConvModel& m, int layer, int in) {
    return emit(m, OpKind::relu, -1, emit(m, OpKind::conv, layer, in));
}

// residual block: conv-relu-conv, add skip, relu; optional 1x1 projection
inline int emit_block(ConvModel& m, const std::string& name, int in, int width, int stride,
                      const std::string& group, int in_width) {
    const int c1 = add_layer(m, name + "c1", LayerKind::conv, in_width, width, 3, stride, 1, true,
                             group);
    const int mid = emit_conv_relu(m, c1, in);
    const int c2 = add_layer(m, name + "c2", LayerKind::conv, width, width, 3, 1, 1, true, group);
    const int main = emit(m, OpKind::conv, c2, mid);
    int skip = in;
    if (stride != 1 || in_width != width) {
        const int ds =
            add_layer(m, name + "ds", LayerKind::conv, in_width, width, 1, stride, 0, true, group);
        skip = emit(m, OpKind::conv, ds, in);
    }
    return emit(m, OpKind::relu, -1, emit(m, OpKind::add, -1, main, skip));
}

inline void init_params(ConvModel& m, uint64_t seed) {
    Rng rng = make_rng(seed, 7);
    for (const auto& l : m.layers) {
        Tensor& w = m.param(l.name + ".weight");
        const float fan_in = static_cast<float>(l.c_in * l.kernel_h * l.kernel_w);
        fill_normal(w, rng, 0.0f, std::sqrt(2.0f / fan_in));
    }
}

}  // namespace detail

// Desk-scale presets. mini-resnet keeps the residual-group structure needed
// for group pruning; tiny-cnn is a plain stack with no groups.
inline ConvModel build_model(ArchPreset arch, int num_classes, uint64_t init_seed = 0) {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    ConvModel m;
    m.preset = arch;
    m.num_classes = num_classes;
    m.num_slots = 1;  // slot 0 = input
    using detail::add_layer;
    using detail::emit;
    using detail::emit_block;
    using detail::emit_conv_relu;

    if (arch == ArchPreset::mini_resnet) {
        const int w1 = 16, w2 = 32;
        const int stem = add_layer(m, "stem", LayerKind::conv, 3, w1, 3, 1, 1, true, "g1");
        int s = emit_conv_relu(m, stem, 0);
        s = emit_block(m, "g1b1", s, w1, 1, "g1", w1);
        s = emit_block(m, "g1b2", s, w1, 1, "g1", w1);
        m.group_stream_slot["g1"] = s;
        s = emit_block(m, "g2b1", s, w2, 2, "g2", w1);
        s = emit_block(m, "g2b2", s, w2, 1, "g2", w2);
        m.group_stream_slot["g2"] = s;
        s = emit(m, OpKind::global_avg_pool, -1, s);
        const int fc = add_layer(m, "fc", LayerKind::linear_as_conv, w2, num_classes, 1, 1, 0,
                                 false, std::nullopt);
        m.logits_slot = emit(m, OpKind::conv, fc, s);

        m.groups.push_back({"g1", {"stem", "g1b1c1", "g1b1c2", "g1b2c1", "g1b2c2"}, w1});
        m.groups.push_back({"g2", {"g2b1c1", "g2b1ds", "g2b1c2", "g2b2c1", "g2b2c2"}, w2});
    } else {
        const int c1 = add_layer(m, "c1", LayerKind::conv, 3, 16, 3, 1, 1, true, std::nullopt);
        int s = emit_conv_relu(m, c1, 0);
        const int c2 = add_layer(m, "c2", LayerKind::conv, 16, 32, 3, 2, 1, true, std::nullopt);
        s = emit_conv_relu(m, c2, s);
        const int c3 = add_layer(m, "c3", LayerKind::conv, 32, 32, 3, 2, 1, true, std::nullopt);
        s = emit_conv_relu(m, c3, s);
        s = emit(m, OpKind::global_avg_pool, -1, s);
        const int fc = add_layer(m, "fc", LayerKind::linear_as_conv, 32, num_classes, 1, 1, 0,
                                 false, std::nullopt);
        m.logits_slot = emit(m, OpKind::conv, fc, s);
    }
    detail::init_params(m, init_seed);
    return m;
}

// Expand (group-or-layer, channel) entries into per-layer keep masks. A group
// entry flips the channel in every member layer; duplicates are idempotent.
inline PruneMask expand_prune_set(const ConvModel& model, const PruneSet& prunes) {
    PruneMask mask = model.full_mask();
    for (const auto& e : prunes) {
        if (const GroupSpec* g = model.find_group(e.unit)) {
            if (e.channel < 0 || e.channel >= g->width)
                throw IndexError("channel " + std::to_string(e.channel) + " out of range for group " +
                                 e.unit);
            for (const auto& lname : g->member_layers)
                mask.entries[lname][static_cast<size_t>(e.channel)] = 0;
        } else if (model.has_layer(e.unit)) {
            const LayerSpec& l = model.layer(e.unit);
            if (e.channel < 0 || e.channel >= l.c_out)
                throw IndexError("channel " + std::to_string(e.channel) + " out of range for layer " +
                                 e.unit);
            mask.entries[e.unit][static_cast<size_t>(e.channel)] = 0;
        } else {
            throw IndexError("unknown prune unit: " + e.unit);
        }
    }
    return mask;
}

// Zero a channel's parameters in place: weights plus bias/normalization
// scale and shift, so the channel's output map is exactly zero.
inline void zero_channel_weights(ConvModel& model, const std::string& layer_name, int channel) {
    const LayerSpec& l = model.layer(layer_name);
    if (channel < 0 || channel >= l.c_out) throw IndexError("channel out of range");
    Tensor& w = model.param(layer_name + ".weight");
    const size_t per = w.numel() / static_cast<size_t>(l.c_out);
    std::fill_n(w.data.begin() + per * static_cast<size_t>(channel), per, 0.0f);
    if (l.has_norm) {
        model.param(layer_name + ".norm_scale").at(channel) = 0.0f;
        model.param(layer_name + ".norm_shift").at(channel) = 0.0f;
    } else {
        model.param(layer_name + ".bias").at(channel) = 0.0f;
    }
}

inline size_t parameter_count(const ConvModel& m, bool trainable_only = false) {
    size_t n = 0;
    for (const auto& [name, t] : m.params) {
        if (trainable_only &&
            (name.ends_with(".norm_mean") || name.ends_with(".norm_var")))
            continue;
        n += t.numel();
    }
    return n;
}

}  // namespace onp::nn
