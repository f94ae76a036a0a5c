#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fullgrad/model_io.hpp"
#include "fullgrad/tensor.hpp"

namespace fullgrad {

namespace detail {

inline uint8_t to_byte(double v01) {
    const double v = std::min(1.0, std::max(0.0, v01));
    return static_cast<uint8_t>(std::floor(v * 255.0 + 0.5));
}

// heat colormap: 0 -> blue, 0.5 -> yellow, 1 -> red
inline void heat_rgb(double t, uint8_t rgb[3]) {
    t = std::min(1.0, std::max(0.0, t));
    double r, g, b;
    if (t < 0.5) {
        const double u = t / 0.5;
        r = u;
        g = u;
        b = 1.0 - u;
    } else {
        const double u = (t - 0.5) / 0.5;
        r = 1.0;
        g = 1.0 - u;
        b = 0.0;
    }
    rgb[0] = to_byte(r);
    rgb[1] = to_byte(g);
    rgb[2] = to_byte(b);
}

}  // namespace detail

// Binary PGM (P5), map rescaled to [0,255]. Written atomically.
inline void write_pgm(const Tensor& map, const std::string& path) {
    detail::require(map.rank() == 2, "write_pgm: expects an [H,W] map");
    const int H = map.dim(0), W = map.dim(1);
    const Tensor scaled = rescale_unit(map);
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (int64_t i = 0; i < scaled.numel(); ++i)
        out.push_back(static_cast<char>(detail::to_byte(scaled[i])));
    detail::atomic_write(path, out);
}

inline Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5") throw std::runtime_error(path + ": not a binary PGM (P5) file");
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw std::runtime_error(path + ": bad PGM header");
    in.get();  // single whitespace after the header
    Tensor map({h, w});
    for (int64_t i = 0; i < map.numel(); ++i) {
        const int c = in.get();
        if (c == EOF) throw std::runtime_error(path + ": truncated PGM payload");
        map[i] = static_cast<double>(c) / maxval;
    }
    return map;
}

// Binary PPM (P6): grayscale base image alpha-blended with the colormapped
// saliency. base is the [H,W] image plane in [0,1]; saliency is rescaled
// before mapping.
inline void write_ppm_overlay(const Tensor& base, const Tensor& saliency, double alpha,
                              const std::string& path) {
    detail::require(base.rank() == 2 && saliency.rank() == 2 && base.shape() == saliency.shape(),
                    "write_ppm_overlay: base and saliency must both be [H,W] and equal");
    detail::require(alpha >= 0.0 && alpha <= 1.0, "write_ppm_overlay: alpha must be in [0,1]");
    const int H = base.dim(0), W = base.dim(1);
    const Tensor scaled = rescale_unit(saliency);
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (int64_t i = 0; i < base.numel(); ++i) {
        uint8_t heat[3];
        detail::heat_rgb(scaled[i], heat);
        const double gray = std::min(1.0, std::max(0.0, base[i]));
        for (int ch = 0; ch < 3; ++ch) {
            const double blended = (1.0 - alpha) * gray + alpha * (heat[ch] / 255.0);
            out.push_back(static_cast<char>(detail::to_byte(blended)));
        }
    }
    detail::atomic_write(path, out);
}

}  // namespace fullgrad
