#ifndef STDIFF_CLIP_IO_HPP
#define STDIFF_CLIP_IO_HPP

#include "stdiff/frame.hpp"
#include "stdiff/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stdiff {

// On-disk clip: header (magic "STDF", version u32, then T, C, H, W as u32),
// followed by T*C*H*W little-endian 32-bit floats in [0, 1].
struct ClipData {
    std::uint32_t T = 0, C = 0, H = 0, W = 0;
    std::vector<float> values;  // I/O space, frame-major
};

inline constexpr std::uint32_t kStdfVersion = 1;

void write_stdf(const std::filesystem::path& path, const ClipData& clip);
ClipData read_stdf(const std::filesystem::path& path);

// 8-bit lossless PNG (grayscale or RGB), stored-deflate encoding.
void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
               std::uint32_t width, std::uint32_t height, int channels);

// Tiles clips into a grid image (one row per clip, one column per frame)
// with a 2px separator, values quantized from [0,1] to 8 bit.
void write_png_frame_grid(const std::filesystem::path& path,
                          const std::vector<ClipData>& rows);

template <typename S>
ClipData clip_from_frames(const std::vector<Tensor<S>>& io_frames) {
    if (io_frames.empty()) throw std::invalid_argument("clip_from_frames: empty clip");
    ClipData c;
    c.T = static_cast<std::uint32_t>(io_frames.size());
    c.C = static_cast<std::uint32_t>(io_frames[0].shape[0]);
    c.H = static_cast<std::uint32_t>(io_frames[0].shape[1]);
    c.W = static_cast<std::uint32_t>(io_frames[0].shape[2]);
    c.values.reserve(static_cast<std::size_t>(c.T) * c.C * c.H * c.W);
    for (const auto& f : io_frames) {
        require_shape(f, io_frames[0].shape, "clip_from_frames");
        for (Eigen::Index i = 0; i < f.numel(); ++i)
            c.values.push_back(static_cast<float>(f.data[i]));
    }
    return c;
}

template <typename S>
std::vector<Tensor<S>> frames_from_clip(const ClipData& c) {
    std::vector<Tensor<S>> out;
    const Eigen::Index n = static_cast<Eigen::Index>(c.C) * c.H * c.W;
    out.reserve(c.T);
    for (std::uint32_t t = 0; t < c.T; ++t) {
        Tensor<S> f(Shape::chw(c.C, c.H, c.W));
        for (Eigen::Index i = 0; i < n; ++i)
            f.data[i] = static_cast<S>(c.values[static_cast<std::size_t>(t) * n + i]);
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace stdiff

#endif
