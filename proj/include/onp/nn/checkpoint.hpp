#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "onp/nn/model.hpp"

namespace onp::nn {

// Checkpoint = named-tensor archive (<path>.tensors) plus a JSON descriptor
// sidecar (<path>.json) carrying layer specs, groups, and a format version.
constexpr uint32_t kCheckpointVersion = 1;
constexpr char kTensorMagic[5] = "ONPT";

inline void save_checkpoint(const ConvModel& model, const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());

    nlohmann::json desc;
    desc["format_version"] = kCheckpointVersion;
    desc["preset"] = preset_name(model.preset);
    desc["num_classes"] = model.num_classes;
    desc["input"] = {model.input_channels, model.input_h, model.input_w};
    for (const auto& l : model.layers) {
        nlohmann::json jl;
        jl["name"] = l.name;
        jl["kind"] = l.kind == LayerKind::conv ? "conv" : "linear-as-conv";
        jl["c_out"] = l.c_out;
        jl["c_in"] = l.c_in;
        jl["kernel"] = {l.kernel_h, l.kernel_w};
        jl["stride"] = l.stride;
        if (l.group_id) jl["group"] = *l.group_id;
        desc["layers"].push_back(jl);
    }
    for (const auto& g : model.groups)
        desc["groups"].push_back(
            {{"id", g.group_id}, {"members", g.member_layers}, {"width", g.width}});

    std::ofstream jf(path + ".json");
    if (!jf) throw IoError("cannot write " + path + ".json");
    jf << desc.dump(2) << "\n";

    std::ofstream tf(path + ".tensors", std::ios::binary);
    if (!tf) throw IoError("cannot write " + path + ".tensors");
    tf.write(kTensorMagic, 4);
    uint32_t v = kCheckpointVersion, count = static_cast<uint32_t>(model.params.size());
    tf.write(reinterpret_cast<const char*>(&v), 4);
    tf.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, t] : model.params) {
        const uint32_t nl = static_cast<uint32_t>(name.size());
        tf.write(reinterpret_cast<const char*>(&nl), 4);
        tf.write(name.data(), nl);
        const uint32_t nd = static_cast<uint32_t>(t.shape.size());
        tf.write(reinterpret_cast<const char*>(&nd), 4);
        for (int d : t.shape) {
            const uint32_t ud = static_cast<uint32_t>(d);
            tf.write(reinterpret_cast<const char*>(&ud), 4);
        }
        tf.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!tf) throw IoError("short write to " + path + ".tensors");
}

inline ConvModel load_checkpoint(const std::string& path) {
    std::ifstream jf(path + ".json");
    if (!jf) throw LoadError("missing descriptor " + path + ".json");
    nlohmann::json desc;
    try {
        jf >> desc;
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("corrupt descriptor: " + std::string(e.what()));
    }
    if (!desc.contains("format_version") ||
        desc["format_version"].get<uint32_t>() != kCheckpointVersion)
        throw LoadError("descriptor version mismatch");
    for (const auto& jl : desc["layers"]) {
        const std::string kind = jl["kind"].get<std::string>();
        if (kind != "conv" && kind != "linear-as-conv")
            throw LoadError("unknown layer kind in descriptor: " + kind);
    }
    ConvModel model =
        build_model(parse_preset(desc["preset"].get<std::string>()), desc["num_classes"].get<int>());
    // Descriptor must describe the same architecture the preset builds.
    if (desc["layers"].size() != model.layers.size())
        throw LoadError("descriptor layer count mismatch");
    for (size_t i = 0; i < model.layers.size(); ++i)
        if (desc["layers"][i]["name"].get<std::string>() != model.layers[i].name)
            throw LoadError("descriptor layer name mismatch");

    std::ifstream tf(path + ".tensors", std::ios::binary);
    if (!tf) throw LoadError("missing archive " + path + ".tensors");
    char magic[4];
    uint32_t v = 0, count = 0;
    if (!tf.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0)
        throw LoadError("bad archive magic");
    if (!tf.read(reinterpret_cast<char*>(&v), 4) || v != kCheckpointVersion)
        throw LoadError("archive version mismatch");
    if (!tf.read(reinterpret_cast<char*>(&count), 4)) throw LoadError("corrupt archive header");
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nl = 0;
        if (!tf.read(reinterpret_cast<char*>(&nl), 4) || nl > 4096)
            throw LoadError("corrupt archive entry");
        std::string name(nl, '\0');
        if (!tf.read(name.data(), nl)) throw LoadError("corrupt archive entry name");
        uint32_t nd = 0;
        if (!tf.read(reinterpret_cast<char*>(&nd), 4) || nd > 8)
            throw LoadError("corrupt archive entry dims");
        std::vector<int> shape(nd);
        for (uint32_t d = 0; d < nd; ++d) {
            uint32_t ud = 0;
            if (!tf.read(reinterpret_cast<char*>(&ud), 4)) throw LoadError("corrupt archive dims");
            shape[d] = static_cast<int>(ud);
        }
        auto it = model.params.find(name);
        if (it == model.params.end()) throw LoadError("unexpected tensor " + name);
        if (it->second.shape != shape) throw LoadError("shape mismatch for tensor " + name);
        if (!tf.read(reinterpret_cast<char*>(it->second.data.data()),
                     static_cast<std::streamsize>(it->second.numel() * sizeof(float))))
            throw LoadError("archive truncated in tensor " + name);
    }
    return model;
}

}  // namespace onp::nn
