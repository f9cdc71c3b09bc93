#ifndef STDIFF_FRAME_HPP
#define STDIFF_FRAME_HPP

#include "stdiff/tensor.hpp"

#include <string>
#include <vector>

namespace stdiff {

// Model-space video frame: CHW pixels in [-1, 1]. File I/O space is [0, 1];
// conversion happens only at the I/O boundary (normalize / denormalize).
template <typename S>
struct Frame {
    Tensor<S> pixels;

    Frame() = default;
    explicit Frame(Tensor<S> p) : pixels(std::move(p)) { validate(); }

    Eigen::Index channels() const { return pixels.shape[0]; }
    Eigen::Index height() const { return pixels.shape[1]; }
    Eigen::Index width() const { return pixels.shape[2]; }

    void validate() const {
        require_rank3(pixels, "Frame");
        const Eigen::Index c = pixels.shape[0];
        if (c != 1 && c != 3)
            throw std::invalid_argument("Frame: channel count must be 1 or 3, got " +
                                        std::to_string(c));
        if (pixels.shape[1] < 4 || pixels.shape[2] < 4)
            throw std::invalid_argument("Frame: spatial dims too small, got " + pixels.shape.str());
        if (!pixels.all_finite()) throw std::invalid_argument("Frame: non-finite pixel value");
        if ((pixels.data.abs() > S(1)).any())
            throw std::invalid_argument("Frame: pixel value outside [-1,1] model range");
    }
};

// Ordered frames with strictly increasing real-valued temporal coordinates.
template <typename S>
struct FrameSequence {
    std::vector<Frame<S>> frames;
    std::vector<double> times;

    FrameSequence() = default;
    FrameSequence(std::vector<Frame<S>> f, std::vector<double> t)
        : frames(std::move(f)), times(std::move(t)) {
        validate();
    }

    std::size_t size() const { return frames.size(); }

    void validate() const {
        if (frames.size() != times.size())
            throw std::invalid_argument("FrameSequence: " + std::to_string(frames.size()) +
                                        " frames vs " + std::to_string(times.size()) + " times");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("FrameSequence: times not strictly increasing at index " +
                                            std::to_string(i));
        for (std::size_t i = 1; i < frames.size(); ++i)
            if (frames[i].pixels.shape != frames[0].pixels.shape)
                throw std::invalid_argument("FrameSequence: frame shape mismatch at index " +
                                            std::to_string(i));
    }

    // Observed pasts are assumed regularly sampled at unit spacing.
    bool unit_spaced() const {
        for (std::size_t i = 1; i < times.size(); ++i)
            if (std::abs(times[i] - times[i - 1] - 1.0) > 1e-9) return false;
        return true;
    }
};

// [0,1] I/O space -> [-1,1] model space, exact 2x - 1.
template <typename S>
Frame<S> normalize(const Tensor<S>& raw) {
    require_rank3(raw, "normalize");
    for (Eigen::Index i = 0; i < raw.numel(); ++i) {
        const S v = raw.data[i];
        if (!(v >= S(0) && v <= S(1)))
            throw std::domain_error("normalize: entry " + std::to_string(i) + " = " +
                                    std::to_string(static_cast<double>(v)) +
                                    " outside [0,1]");
    }
    return Frame<S>(Tensor<S>(raw.shape, raw.data * S(2) - S(1)));
}

// Model space -> [0,1] I/O space; clamps to [-1,1] first, then y/2 + 1/2
// (exact inverse of normalize on representable inputs).
template <typename S>
Tensor<S> denormalize(const Frame<S>& f) {
    Tensor<S> out(f.pixels.shape);
    out.data = f.pixels.data.min(S(1)).max(S(-1)) * S(0.5) + S(0.5);
    return out;
}

}  // namespace stdiff

#endif
