#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "fullgrad/network.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

inline constexpr const char* kModelFormat = "fullgrad-model-v1";

namespace detail {

inline uint64_t fnv1a64(const std::vector<uint8_t>& bytes) {
    uint64_t h = 14695981039346656037ULL;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// row-major values as little-endian IEEE-754 single precision, no padding
inline std::vector<uint8_t> tensor_f32le(const Tensor& t) {
    std::vector<uint8_t> out(static_cast<size_t>(t.numel()) * 4);
    for (int64_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        uint32_t u;
        static_assert(sizeof(u) == sizeof(f));
        std::memcpy(&u, &f, 4);
        out[static_cast<size_t>(i) * 4 + 0] = static_cast<uint8_t>(u & 0xff);
        out[static_cast<size_t>(i) * 4 + 1] = static_cast<uint8_t>((u >> 8) & 0xff);
        out[static_cast<size_t>(i) * 4 + 2] = static_cast<uint8_t>((u >> 16) & 0xff);
        out[static_cast<size_t>(i) * 4 + 3] = static_cast<uint8_t>((u >> 24) & 0xff);
    }
    return out;
}

inline Tensor tensor_from_f32le(const uint8_t* bytes, const std::vector<int>& shape) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
        const uint32_t u = static_cast<uint32_t>(bytes[i * 4 + 0]) |
                           (static_cast<uint32_t>(bytes[i * 4 + 1]) << 8) |
                           (static_cast<uint32_t>(bytes[i * 4 + 2]) << 16) |
                           (static_cast<uint32_t>(bytes[i * 4 + 3]) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        t[i] = static_cast<double>(f);
    }
    return t;
}

// write to a sibling temp file, then rename: readers never see a torn file
inline void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + tmp + " -> " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

inline nlohmann::json layer_to_json(const LayerSpec& l) {
    nlohmann::json j;
    j["kind"] = layer_kind_name(l.kind);
    switch (l.kind) {
        case LayerKind::Conv2d:
            j["in_channels"] = l.in_channels;
            j["out_channels"] = l.out_channels;
            j["kernel"] = {l.kernel.h, l.kernel.w};
            j["stride"] = {l.stride.h, l.stride.w};
            j["padding"] = {l.padding.h, l.padding.w};
            j["bias"] = l.has_bias;
            break;
        case LayerKind::Linear:
            j["in_features"] = l.in_features;
            j["out_features"] = l.out_features;
            j["bias"] = l.has_bias;
            break;
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d:
            j["window"] = {l.window.h, l.window.w};
            j["stride"] = {l.stride.h, l.stride.w};
            break;
        case LayerKind::BatchNorm2d:
            j["channels"] = l.channels;
            j["eps"] = l.eps;
            break;
        case LayerKind::ReLU:
        case LayerKind::Sigmoid:
        case LayerKind::Flatten:
            break;
    }
    return j;
}

inline Shape2 shape2_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw std::runtime_error("manifest: expected [h, w] pair");
    return Shape2{j[0].get<int>(), j[1].get<int>()};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv2d")
        return LayerSpec::conv2d(j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                                 shape2_from_json(j.at("kernel")), shape2_from_json(j.at("stride")),
                                 shape2_from_json(j.at("padding")), j.at("bias").get<bool>());
    if (kind == "linear")
        return LayerSpec::linear(j.at("in_features").get<int>(), j.at("out_features").get<int>(),
                                 j.at("bias").get<bool>());
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "sigmoid") return LayerSpec::sigmoid();
    if (kind == "maxpool2d")
        return LayerSpec::maxpool2d(shape2_from_json(j.at("window")),
                                    shape2_from_json(j.at("stride")));
    if (kind == "avgpool2d")
        return LayerSpec::avgpool2d(shape2_from_json(j.at("window")),
                                    shape2_from_json(j.at("stride")));
    if (kind == "batchnorm2d")
        return LayerSpec::batchnorm2d(j.at("channels").get<int>(), j.at("eps").get<double>());
    if (kind == "flatten") return LayerSpec::flatten();
    throw std::runtime_error("manifest: unknown layer kind \"" + kind + "\"");
}

// manifest order of a layer's tensors; also the blob order
inline std::vector<std::pair<std::string, const Tensor*>> named_tensors(const LayerParams& p) {
    std::vector<std::pair<std::string, const Tensor*>> v;
    if (p.weight.defined()) v.emplace_back("weight", &p.weight);
    if (p.bias.defined()) v.emplace_back("bias", &p.bias);
    if (p.gamma.defined()) v.emplace_back("gamma", &p.gamma);
    if (p.beta.defined()) v.emplace_back("beta", &p.beta);
    if (p.running_mean.defined()) v.emplace_back("running_mean", &p.running_mean);
    if (p.running_var.defined()) v.emplace_back("running_var", &p.running_var);
    return v;
}

inline Tensor* tensor_slot(LayerParams& p, const std::string& name) {
    if (name == "weight") return &p.weight;
    if (name == "bias") return &p.bias;
    if (name == "gamma") return &p.gamma;
    if (name == "beta") return &p.beta;
    if (name == "running_mean") return &p.running_mean;
    if (name == "running_var") return &p.running_var;
    return nullptr;
}

}  // namespace detail

// Writes a JSON manifest (architecture, tensor shapes, per-tensor FNV-1a 64
// checksums) plus a raw weights blob: float32 little-endian, tensors
// concatenated in manifest order, each row-major.
inline void save_model(const NetworkSpec& spec, const Parameters& params,
                       const std::string& manifest_path, const std::string& weights_path) {
    detail::require(params.layers.size() == spec.layers.size(),
                    "save_model: parameters do not match spec");
    nlohmann::json manifest;
    manifest["format"] = kModelFormat;
    manifest["input_shape"] = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    manifest["num_classes"] = spec.num_classes;
    manifest["layers"] = nlohmann::json::array();
    for (const LayerSpec& l : spec.layers) manifest["layers"].push_back(detail::layer_to_json(l));

    std::string blob;
    manifest["tensors"] = nlohmann::json::array();
    for (size_t li = 0; li < spec.layers.size(); ++li) {
        for (const auto& [name, t] : detail::named_tensors(params.layers[li])) {
            const std::vector<uint8_t> bytes = detail::tensor_f32le(*t);
            nlohmann::json entry;
            entry["layer"] = li;
            entry["name"] = name;
            entry["shape"] = t->shape();
            entry["fnv1a64"] = detail::hex64(detail::fnv1a64(bytes));
            manifest["tensors"].push_back(entry);
            blob.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        }
    }

    detail::atomic_write(manifest_path, manifest.dump(2) + "\n");
    detail::atomic_write(weights_path, blob);
}

struct LoadedModel {
    NetworkSpec spec;
    Parameters params;
};

inline LoadedModel load_model(const std::string& manifest_path, const std::string& weights_path) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!manifest.contains("format") || manifest["format"] != kModelFormat)
        throw std::runtime_error("manifest: missing or unsupported format (want \"" +
                                 std::string(kModelFormat) + "\")");

    LoadedModel m;
    const auto& ishape = manifest.at("input_shape");
    if (!ishape.is_array() || ishape.size() != 3)
        throw std::runtime_error("manifest: input_shape must be [C, H, W]");
    m.spec.input_shape = {ishape[0].get<int>(), ishape[1].get<int>(), ishape[2].get<int>()};
    m.spec.num_classes = manifest.at("num_classes").get<int>();
    for (const auto& jl : manifest.at("layers"))
        m.spec.layers.push_back(detail::layer_from_json(jl));
    validate_spec(m.spec);

    const std::string blob = detail::read_file(weights_path);
    m.params.layers.resize(m.spec.layers.size());

    size_t offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
        const size_t li = entry.at("layer").get<size_t>();
        if (li >= m.params.layers.size())
            throw std::runtime_error("manifest: tensor entry references layer " +
                                     std::to_string(li) + " beyond the layer list");
        const std::string name = entry.at("name").get<std::string>();
        Tensor* slot = detail::tensor_slot(m.params.layers[li], name);
        if (slot == nullptr)
            throw std::runtime_error("manifest: unknown tensor name \"" + name + "\"");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        int64_t numel = 1;
        for (int d : shape) numel *= d;
        const size_t nbytes = static_cast<size_t>(numel) * 4;
        if (offset + nbytes > blob.size())
            throw std::runtime_error("weights blob too short: need " +
                                     std::to_string(offset + nbytes) + " bytes, have " +
                                     std::to_string(blob.size()));
        const uint8_t* bytes = reinterpret_cast<const uint8_t*>(blob.data()) + offset;
        const uint64_t sum =
            detail::fnv1a64(std::vector<uint8_t>(bytes, bytes + nbytes));
        const std::string want = entry.at("fnv1a64").get<std::string>();
        if (detail::hex64(sum) != want)
            throw std::runtime_error("checksum mismatch for layer " + std::to_string(li) + " " +
                                     name + ": blob has " + detail::hex64(sum) + ", manifest says " +
                                     want);
        *slot = detail::tensor_from_f32le(bytes, shape);
        offset += nbytes;
    }
    if (offset != blob.size())
        throw std::runtime_error("weights blob too long: manifest accounts for " +
                                 std::to_string(offset) + " of " + std::to_string(blob.size()) +
                                 " bytes");
    return m;
}

}  // namespace fullgrad
