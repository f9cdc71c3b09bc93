#ifndef STDIFF_DATASETS_HPP
#define STDIFF_DATASETS_HPP

#include "stdiff/frame.hpp"
#include "stdiff/random.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace stdiff {

// Synthetic stochastic-moving-shapes video: constant-velocity shapes on a
// dark canvas; on wall contact the direction is redrawn uniformly from the
// outward-pointing half-circle (speed preserved), which makes the future
// genuinely multimodal. Rendering is coverage-antialiased via 4x4
// supersampling, values in [0, 1].
struct SyntheticConfig {
    Eigen::Index height = 32, width = 32, channels = 1;
    Eigen::Index num_shapes = 2;
    std::vector<std::string> shape_kinds{"square", "circle", "cross"};
    double speed_min = 0.8, speed_max = 1.6;
    bool randomize_bounce = true;
    Eigen::Index clip_length = 20;
    Eigen::Index num_clips = 2256;
    double shape_size = 7.0;  // bounding diameter, px
    std::uint64_t seed = 0;

    void validate() const {
        if (height < 16 || width < 16)
            throw std::invalid_argument("SyntheticConfig: canvas must be at least 16x16");
        if (channels != 1 && channels != 3)
            throw std::invalid_argument("SyntheticConfig: channels must be 1 or 3");
        if (num_shapes < 1) throw std::invalid_argument("SyntheticConfig: need at least one shape");
        if (shape_kinds.empty()) throw std::invalid_argument("SyntheticConfig: no shape kinds");
        for (const auto& k : shape_kinds)
            if (k != "square" && k != "circle" && k != "cross")
                throw std::invalid_argument("SyntheticConfig: unknown shape kind '" + k + "'");
        if (speed_min < 0 || speed_max < speed_min)
            throw std::invalid_argument("SyntheticConfig: bad speed range");
        if (clip_length < 2 || num_clips < 1)
            throw std::invalid_argument("SyntheticConfig: bad clip dimensions");
        if (shape_size < 2 || shape_size > static_cast<double>(std::min(height, width)) / 2)
            throw std::invalid_argument("SyntheticConfig: shape does not fit the canvas");
    }
};

template <typename S>
struct VideoDataset {
    std::vector<FrameSequence<S>> clips;
    // downsample map: original temporal coordinate of each retained index;
    // empty means identity (unit-spaced originals)
    std::vector<double> original_times;
    std::string split_name;
};

namespace synth_detail {

struct ShapeState {
    int kind = 0;  // 0 square, 1 circle, 2 cross
    double radius = 3.0;
    double x = 0, y = 0;
    double vx = 0, vy = 0;
};

// Advances one unit of time with reflective or direction-randomizing walls.
// Centers stay within [radius, extent - radius] on both axes.
inline void advance_shape(ShapeState& s, double w, double h, bool randomize, Rng& rng) {
    double t_rem = 1.0;
    for (int guard = 0; guard < 16 && t_rem > 1e-12; ++guard) {
        const double lo_x = s.radius, hi_x = w - s.radius;
        const double lo_y = s.radius, hi_y = h - s.radius;
        double t_hit = t_rem;
        int wall = -1;  // 0 left, 1 right, 2 top, 3 bottom
        if (s.vx < 0 && (lo_x - s.x) / s.vx < t_hit) {
            t_hit = (lo_x - s.x) / s.vx;
            wall = 0;
        }
        if (s.vx > 0 && (hi_x - s.x) / s.vx < t_hit) {
            t_hit = (hi_x - s.x) / s.vx;
            wall = 1;
        }
        if (s.vy < 0 && (lo_y - s.y) / s.vy < t_hit) {
            t_hit = (lo_y - s.y) / s.vy;
            wall = 2;
        }
        if (s.vy > 0 && (hi_y - s.y) / s.vy < t_hit) {
            t_hit = (hi_y - s.y) / s.vy;
            wall = 3;
        }
        s.x += s.vx * t_hit;
        s.y += s.vy * t_hit;
        t_rem -= t_hit;
        if (wall < 0) break;
        const double speed = std::hypot(s.vx, s.vy);
        if (randomize && speed > 0) {
            // outward half-circle around the inward wall normal
            const double theta = (rng.uniform() - 0.5) * 3.14159265358979323846 * 0.98;
            const double c = std::cos(theta) * speed, q = std::sin(theta) * speed;
            switch (wall) {
                case 0: s.vx = c;  s.vy = q; break;
                case 1: s.vx = -c; s.vy = q; break;
                case 2: s.vy = c;  s.vx = q; break;
                case 3: s.vy = -c; s.vx = q; break;
            }
        } else {
            if (wall <= 1) s.vx = -s.vx;
            else s.vy = -s.vy;
        }
        // nudge off the wall to avoid re-hitting at t=0
        s.x = std::min(std::max(s.x, lo_x + 1e-9), hi_x - 1e-9);
        s.y = std::min(std::max(s.y, lo_y + 1e-9), hi_y - 1e-9);
    }
}

inline bool inside_shape(const ShapeState& s, double px, double py) {
    const double dx = px - s.x, dy = py - s.y;
    switch (s.kind) {
        case 0: return std::abs(dx) <= s.radius && std::abs(dy) <= s.radius;
        case 1: return dx * dx + dy * dy <= s.radius * s.radius;
        default: {
            const double arm = s.radius / 3.0;
            return (std::abs(dx) <= arm && std::abs(dy) <= s.radius) ||
                   (std::abs(dx) <= s.radius && std::abs(dy) <= arm);
        }
    }
}

template <typename S>
Tensor<S> render(const std::vector<ShapeState>& shapes, Eigen::Index C, Eigen::Index H,
                 Eigen::Index W) {
    Tensor<S> img(Shape::chw(C, H, W));
    for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < W; ++x) {
            double cov = 0;
            for (const auto& s : shapes) {
                int hits = 0;
                for (int sy = 0; sy < 4; ++sy)
                    for (int sx = 0; sx < 4; ++sx)
                        if (inside_shape(s, static_cast<double>(x) + (sx + 0.5) / 4.0,
                                         static_cast<double>(y) + (sy + 0.5) / 4.0))
                            ++hits;
                cov = std::max(cov, static_cast<double>(hits) / 16.0);
            }
            for (Eigen::Index c = 0; c < C; ++c) img.chw(c, y, x) = static_cast<S>(cov);
        }
    return img;
}

}  // namespace synth_detail

// Continuous shape-center trajectory over `steps` unit time steps (length
// steps + 1 including the start). Exposed so kinematics are testable apart
// from rasterization.
inline std::vector<std::array<double, 2>> simulate_trajectory(synth_detail::ShapeState s,
                                                              double w, double h,
                                                              Eigen::Index steps, bool randomize,
                                                              Rng& rng) {
    std::vector<std::array<double, 2>> out;
    out.push_back({s.x, s.y});
    for (Eigen::Index t = 0; t < steps; ++t) {
        synth_detail::advance_shape(s, w, h, randomize, rng);
        out.push_back({s.x, s.y});
    }
    return out;
}

template <typename S>
VideoDataset<S> generate_stochastic_shapes(const SyntheticConfig& cfg, const RandomSource& rs) {
    cfg.validate();
    using synth_detail::ShapeState;
    VideoDataset<S> ds;
    ds.clips.reserve(static_cast<std::size_t>(cfg.num_clips));
    const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
    for (Eigen::Index c = 0; c < cfg.num_clips; ++c) {
        Rng rng = rs.stream("data", static_cast<std::uint64_t>(c));
        std::vector<ShapeState> shapes(static_cast<std::size_t>(cfg.num_shapes));
        for (auto& s : shapes) {
            const auto& kind = cfg.shape_kinds[rng.uniform_int(0, cfg.shape_kinds.size() - 1)];
            s.kind = kind == "square" ? 0 : (kind == "circle" ? 1 : 2);
            s.radius = cfg.shape_size / 2.0;
            s.x = s.radius + rng.uniform() * (W - 2 * s.radius);
            s.y = s.radius + rng.uniform() * (H - 2 * s.radius);
            const double speed = cfg.speed_min + rng.uniform() * (cfg.speed_max - cfg.speed_min);
            const double ang = rng.uniform() * 2.0 * 3.14159265358979323846;
            s.vx = speed * std::cos(ang);
            s.vy = speed * std::sin(ang);
        }
        std::vector<Frame<S>> frames;
        std::vector<double> times;
        for (Eigen::Index t = 0; t < cfg.clip_length; ++t) {
            if (t > 0)
                for (auto& s : shapes)
                    synth_detail::advance_shape(s, W, H, cfg.randomize_bounce, rng);
            Tensor<S> io = synth_detail::render<S>(shapes, cfg.channels, cfg.height, cfg.width);
            frames.push_back(normalize(io));
            times.push_back(static_cast<double>(t + 1));
        }
        ds.clips.emplace_back(std::move(frames), std::move(times));
    }
    return ds;
}

// Keeps frames at indices 0, k, 2k, ... of every clip; retained frames are
// renumbered to unit spacing and the original coordinates are kept as the
// downsample map (held-out intermediates stay evaluable).
template <typename S>
VideoDataset<S> downsample_framerate(const VideoDataset<S>& ds, Eigen::Index keep_every) {
    if (keep_every < 1) throw std::invalid_argument("downsample_framerate: keep_every must be >= 1");
    if (keep_every == 1) return ds;
    VideoDataset<S> out;
    out.split_name = ds.split_name;
    for (const auto& clip : ds.clips) {
        const auto T = static_cast<Eigen::Index>(clip.size());
        if (T % keep_every != 0)
            throw std::invalid_argument("downsample_framerate: keep_every " +
                                        std::to_string(keep_every) + " does not divide clip length " +
                                        std::to_string(T));
        const Eigen::Index kept = T / keep_every;
        if (kept < 2)
            throw std::invalid_argument("downsample_framerate: clip too short after downsampling");
        std::vector<Frame<S>> frames;
        std::vector<double> times;
        for (Eigen::Index j = 0; j < kept; ++j) {
            frames.push_back(clip.frames[static_cast<std::size_t>(j * keep_every)]);
            times.push_back(static_cast<double>(j + 1));
        }
        out.clips.emplace_back(std::move(frames), std::move(times));
    }
    const auto T0 = static_cast<Eigen::Index>(ds.clips.empty() ? 0 : ds.clips[0].size());
    for (Eigen::Index j = 0; j < T0 / keep_every; ++j)
        out.original_times.push_back(ds.clips.empty() ? 0.0
                                                      : ds.clips[0].times[static_cast<std::size_t>(
                                                            j * keep_every)]);
    return out;
}

template <typename S>
std::pair<VideoDataset<S>, VideoDataset<S>> split(const VideoDataset<S>& ds, double train_frac,
                                                  const RandomSource& rs) {
    if (train_frac < 0 || train_frac > 1)
        throw std::invalid_argument("split: train_frac must be in [0, 1]");
    std::vector<std::size_t> idx(ds.clips.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = rs.stream("split");
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(0, i - 1)]);
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(ds.clips.size())));
    VideoDataset<S> train, test;
    train.split_name = "train";
    test.split_name = "test";
    train.original_times = ds.original_times;
    test.original_times = ds.original_times;
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? train : test).clips.push_back(ds.clips[idx[i]]);
    return {std::move(train), std::move(test)};
}

}  // namespace stdiff

#endif
