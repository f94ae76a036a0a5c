#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fullgrad/model_io.hpp"
#include "fullgrad/random.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

struct Dataset {
    Tensor images;  // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;
    std::string split;

    int size() const { return images.defined() ? images.dim(0) : 0; }

    Tensor image(int i) const {
        detail::require(i >= 0 && i < size(), "Dataset::image: index out of range");
        const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
        Tensor x({1, C, H, W});
        const int64_t n = x.numel();
        const double* src = images.data() + static_cast<int64_t>(i) * n;
        for (int64_t j = 0; j < n; ++j) x[j] = src[j];
        return x;
    }
};

namespace detail {

inline uint32_t read_be32(std::istream& in, const std::string& path) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("unexpected end of file: " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void append_be32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

}  // namespace detail

// IDX container pair (big-endian magic 2051 = images, 2049 = labels).
// Pixel bytes scale to [0,1] with 255 -> 1.0 exactly.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open: " + images_path);
    const uint32_t img_magic = detail::read_be32(img, images_path);
    if (img_magic != 2051)
        throw std::runtime_error(images_path + ": bad magic " + std::to_string(img_magic) +
                                 " (want 2051 for an IDX image file)");
    const uint32_t n = detail::read_be32(img, images_path);
    const uint32_t h = detail::read_be32(img, images_path);
    const uint32_t w = detail::read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open: " + labels_path);
    const uint32_t lab_magic = detail::read_be32(lab, labels_path);
    if (lab_magic != 2049)
        throw std::runtime_error(labels_path + ": bad magic " + std::to_string(lab_magic) +
                                 " (want 2049 for an IDX label file)");
    const uint32_t nl = detail::read_be32(lab, labels_path);
    if (n != nl)
        throw std::runtime_error("image/label count mismatch: " + std::to_string(n) +
                                 " images vs " + std::to_string(nl) + " labels");

    Dataset d;
    d.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
    for (uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!img) throw std::runtime_error("unexpected end of file: " + images_path);
        double* dst = d.images.data() + static_cast<int64_t>(i) * h * w;
        for (size_t j = 0; j < buf.size(); ++j) dst[j] = buf[j] / 255.0;
    }
    d.labels.resize(n);
    std::vector<uint8_t> lbuf(n);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n));
    if (!lab) throw std::runtime_error("unexpected end of file: " + labels_path);
    for (uint32_t i = 0; i < n; ++i) d.labels[i] = lbuf[i];
    return d;
}

inline void save_idx(const Dataset& d, const std::string& images_path,
                     const std::string& labels_path) {
    detail::require(d.images.defined() && d.images.rank() == 4 && d.images.dim(1) == 1,
                    "save_idx: expects [N,1,H,W] images");
    detail::require(static_cast<int>(d.labels.size()) == d.size(),
                    "save_idx: label count must match image count");
    const int n = d.size(), h = d.images.dim(2), w = d.images.dim(3);

    std::string img;
    detail::append_be32(img, 2051);
    detail::append_be32(img, static_cast<uint32_t>(n));
    detail::append_be32(img, static_cast<uint32_t>(h));
    detail::append_be32(img, static_cast<uint32_t>(w));
    for (int64_t j = 0; j < d.images.numel(); ++j) {
        const double v = std::min(1.0, std::max(0.0, d.images[j]));
        img.push_back(static_cast<char>(static_cast<int>(std::floor(v * 255.0 + 0.5))));
    }
    std::string lab;
    detail::append_be32(lab, 2049);
    detail::append_be32(lab, static_cast<uint32_t>(n));
    for (int l : d.labels) lab.push_back(static_cast<char>(l));

    detail::atomic_write(images_path, img);
    detail::atomic_write(labels_path, lab);
}

// Procedural 10-class 1x28x28 corpus: classes 0-4 are horizontal bars
// centered on rows {4,9,14,19,24}, classes 5-9 vertical bars on the same
// columns; +-1 center jitter, 3 pixels thick, per-image bar intensity in
// [0.75,1], background noise in [0,0.2]. Linearly separable enough for a
// small CNN to pass 95% test accuracy quickly, with distinct geometry per
// class so contrastive protocols (class 8 vs class 3) are meaningful.
inline Dataset make_bars_dataset(int n, uint64_t seed, const std::string& split = "train") {
    detail::require(n >= 1, "make_bars_dataset: n must be >= 1");
    constexpr int H = 28, W = 28;
    constexpr int centers[5] = {4, 9, 14, 19, 24};
    Rng rng(seed);
    Dataset d;
    d.split = split;
    d.images = Tensor({n, 1, H, W});
    d.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % 10;
        d.labels[static_cast<size_t>(i)] = label;
        double* px = d.images.data() + static_cast<int64_t>(i) * H * W;
        for (int64_t j = 0; j < static_cast<int64_t>(H) * W; ++j) px[j] = 0.2 * rng.uniform();
        const int center = centers[label % 5] + (rng.uniform_int(3) - 1);
        const double intensity = 0.75 + 0.25 * rng.uniform();
        const bool horizontal = label < 5;
        for (int t = -1; t <= 1; ++t) {
            const int line = center + t;
            if (line < 0 || line >= (horizontal ? H : W)) continue;
            for (int j = 0; j < (horizontal ? W : H); ++j) {
                const int r = horizontal ? line : j;
                const int c = horizontal ? j : line;
                px[static_cast<int64_t>(r) * W + c] = intensity;
            }
        }
    }
    return d;
}

}  // namespace fullgrad
