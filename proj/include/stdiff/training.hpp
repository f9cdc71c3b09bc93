#ifndef STDIFF_TRAINING_HPP
#define STDIFF_TRAINING_HPP

#include "stdiff/datasets.hpp"
#include "stdiff/diffusion.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/model.hpp"
#include "stdiff/parallel.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace stdiff {

struct TrainingConfig {
    Eigen::Index past_frames = 5;    // N
    Eigen::Index future_pool = 10;   // M
    Eigen::Index future_samples = 6; // P, sampled per example
    double lr = 1e-4;
    Eigen::Index epochs = 50;
    Eigen::Index restart_cycle = 200;  // cosine warm-restart period, in epochs
    double ema_decay = 0.999;
    Eigen::Index batch_size = 16;
    double weight_decay = 0.01;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    int threads = 0;         // 0 = hardware concurrency
    std::uint64_t seed = 0;

    void validate() const {
        if (past_frames < 2) throw std::invalid_argument("TrainingConfig: need N >= 2 past frames");
        if (future_samples < 1 || future_samples > future_pool)
            throw std::invalid_argument("TrainingConfig: need 1 <= P <= M");
        if (!(lr > 0)) throw std::invalid_argument("TrainingConfig: learning rate must be positive");
        if (epochs < 1 || batch_size < 1 || restart_cycle < 1)
            throw std::invalid_argument("TrainingConfig: bad loop sizes");
        if (ema_decay < 0 || ema_decay >= 1)
            throw std::invalid_argument("TrainingConfig: ema_decay must be in [0, 1)");
    }
};

// lr(t) = lr_max/2 * (1 + cos(pi * t_cycle / T)) with lr_min = 0, restarting
// every `cycle` epochs; t is a fractional epoch count.
inline double cosine_restart_lr(double lr_max, double epoch_t, double cycle) {
    const double t_cur = epoch_t - std::floor(epoch_t / cycle) * cycle;
    return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * t_cur / cycle));
}

// P distinct future offsets drawn uniformly from {1..M}, ascending.
inline std::vector<Eigen::Index> sample_future_timesteps(Eigen::Index M, Eigen::Index P,
                                                         Rng& rng) {
    if (P < 1 || P > M)
        throw std::invalid_argument("sample_future_timesteps: need 1 <= P <= M, got P=" +
                                    std::to_string(P) + " M=" + std::to_string(M));
    std::vector<Eigen::Index> pool(static_cast<std::size_t>(M));
    for (Eigen::Index i = 0; i < M; ++i) pool[static_cast<std::size_t>(i)] = i + 1;
    for (Eigen::Index i = 0; i < P; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(M - 1)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(P));
    std::sort(pool.begin(), pool.end());
    return pool;
}

// Decoupled-weight-decay Adam on the flat parameter vector.
template <typename S>
struct AdamW {
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.01;
    long t = 0;
    Vec m, v;

    explicit AdamW(Eigen::Index n, double wd = 0.01)
        : weight_decay(wd), m(Vec::Zero(n)), v(Vec::Zero(n)) {}

    void step(Vec& params, const Vec& grad, double lr) {
        ++t;
        const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
        m = b1 * m + (S(1) - b1) * grad;
        v = b2 * v + (S(1) - b2) * grad.square();
        const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(beta1, t)));
        const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(beta2, t)));
        params -= static_cast<S>(lr) *
                  ((m * c1) / ((v * c2).sqrt() + static_cast<S>(eps)) +
                   static_cast<S>(weight_decay) * params);
    }
};

// Optional instrumentation for the training loss.
struct TrainingTrace {
    int sde_integrations = 0;
    int noise_evals = 0;
    std::vector<std::pair<double, double>> intervals;
};

// Optional stand-in for the noise predictor; receives the true noise so
// tests can realize the exact-noise oracle.
template <typename S>
using NoiseOracle = std::function<Tensor<S>(const Tensor<S>& x_l, const Tensor<S>& x_prev,
                                            const Tensor<S>& m, Eigen::Index level,
                                            const Tensor<S>& true_eps)>;

// One example's simplified objective: encode the past, integrate the motion
// SDE across consecutive sampled future times, corrupt each target frame to
// a uniform level and accumulate |eps - eps_theta|^2 (mean over the P terms;
// per-pixel mean inside each term). Conditioning frames are ground truth
// (teacher forcing); generated frames never enter here.
template <typename S>
ad::Var<S> training_loss(BoundParams<S>& p, const STDiffModel<S>& model,
                         const FrameSequence<S>& past, const FrameSequence<S>& future,
                         const TrainingConfig& tc, Rng& rng_timesteps, Rng& rng_eps,
                         Rng& rng_wiener, const NoiseOracle<S>* oracle = nullptr,
                         TrainingTrace* trace = nullptr) {
    const auto N = static_cast<Eigen::Index>(past.size());
    const auto M = static_cast<Eigen::Index>(future.size());
    if (N != tc.past_frames)
        throw std::invalid_argument("training_loss: expected " + std::to_string(tc.past_frames) +
                                    " past frames, got " + std::to_string(N));
    if (M != tc.future_pool)
        throw std::invalid_argument("training_loss: expected " + std::to_string(tc.future_pool) +
                                    " future frames, got " + std::to_string(M));
    if (!future.unit_spaced() || std::abs(future.times.front() - past.times.back() - 1.0) > 1e-9)
        throw std::invalid_argument(
            "training_loss: future frames must continue the past at unit spacing");

    ad::Var<S> m = encode_past(p, model.cfg.encoder, past);
    const std::vector<Eigen::Index> ks = sample_future_timesteps(M, tc.future_samples, rng_timesteps);

    const double t0 = past.times.back();
    double t_prev = t0;
    ad::Var<S> total = p.tape().constant(Tensor<S>::zeros(Shape{1}));
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double ti = t0 + static_cast<double>(ks[i]);
        m = sde_integrate_net(p, model.cfg.sde_net, m, t_prev, ti, model.cfg.solver, rng_wiener);
        if (trace) {
            ++trace->sde_integrations;
            trace->intervals.emplace_back(t_prev, ti);
        }
        const auto level =
            static_cast<Eigen::Index>(rng_eps.uniform_int(1, static_cast<std::uint64_t>(model.schedule.L)));
        const Frame<S>& target = future.frames[static_cast<std::size_t>(ks[i] - 1)];
        Tensor<S> eps = rng_eps.template normal_tensor<S>(target.pixels.shape);
        NoisyFrame<S> x_l = forward_sample(target, level, eps, model.schedule);
        const Frame<S>& cond =
            (i == 0) ? past.frames.back() : future.frames[static_cast<std::size_t>(ks[i - 1] - 1)];
        ad::Var<S> loss_i;
        if (oracle) {
            Tensor<S> eps_hat =
                (*oracle)(x_l.pixels, cond.pixels, m.value(), level, eps);
            loss_i = ad::mean_sq_error(p.tape().constant(std::move(eps_hat)), eps);
        } else {
            ad::Var<S> eps_hat = predict_noise(p, model.cfg.unet, x_l.pixels, cond.pixels, m, level);
            loss_i = ad::mean_sq_error(eps_hat, eps);
        }
        if (trace) ++trace->noise_evals;
        total = ad::add(total, loss_i);
        t_prev = ti;
    }
    return ad::scale(total, S(1) / static_cast<S>(ks.size()));
}

// Per-step RNG keys: every (epoch, step, example) triple owns independent
// substreams, which keeps training bit-reproducible for any thread count and
// lets a resumed run replay the exact remaining stream.
struct StepKey {
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
};

template <typename S>
struct BatchItem {
    const FrameSequence<S>* past;
    const FrameSequence<S>* future;
};

// Forward/backward over a batch (parallel over examples, reduced in index
// order), one AdamW step, one EMA update. Returns the mean loss.
template <typename S>
S batch_training_step(STDiffModel<S>& model, AdamW<S>& opt,
                      const std::vector<BatchItem<S>>& batch, const TrainingConfig& tc,
                      const RandomSource& rs, StepKey key, double lr,
                      const NoiseOracle<S>* oracle = nullptr) {
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;
    const int B = static_cast<int>(batch.size());
    if (B == 0) throw std::invalid_argument("batch_training_step: empty batch");

    std::vector<S> losses(static_cast<std::size_t>(B), S(0));
    std::vector<Vec> grads(static_cast<std::size_t>(B));

    parallel_for(B, std::min(resolve_threads(tc.threads), B), [&](int i) {
        ad::Tape<S> tape;
        BoundParams<S> p(tape, model.live());
        Rng rts = rs.stream("timesteps", key.epoch, key.step, static_cast<std::uint64_t>(i));
        Rng reps = rs.stream("schedule_eps", key.epoch, key.step, static_cast<std::uint64_t>(i));
        Rng rw = rs.stream("wiener", key.epoch, key.step, static_cast<std::uint64_t>(i));
        ad::Var<S> loss = training_loss(p, model, *batch[static_cast<std::size_t>(i)].past,
                                        *batch[static_cast<std::size_t>(i)].future, tc, rts, reps,
                                        rw, oracle);
        losses[static_cast<std::size_t>(i)] = loss.value().data[0];
        grads[static_cast<std::size_t>(i)] = Vec::Zero(model.params.size());
        if (loss.node()->needs_grad) {
            tape.backward(loss);
            tape.accumulate_param_grads(grads[static_cast<std::size_t>(i)]);
        }
    });

    Vec total = Vec::Zero(model.params.size());
    S loss_sum = S(0);
    for (int i = 0; i < B; ++i) {
        total += grads[static_cast<std::size_t>(i)];
        loss_sum += losses[static_cast<std::size_t>(i)];
    }
    total /= static_cast<S>(B);
    const S mean_loss = loss_sum / static_cast<S>(B);
    if (!std::isfinite(static_cast<double>(mean_loss)))
        throw NumericError("batch_training_step: non-finite loss at epoch " +
                           std::to_string(key.epoch) + " step " + std::to_string(key.step));

    if (tc.grad_clip > 0) {
        const double norm = std::sqrt(static_cast<double>(total.square().sum()));
        if (norm > tc.grad_clip) total *= static_cast<S>(tc.grad_clip / norm);
    }
    opt.step(model.params.values(), total, lr);
    ema_update(model, tc.ema_decay);
    return mean_loss;
}

// Single-example training step (batch of one), per the module contract.
template <typename S>
S training_step(STDiffModel<S>& model, AdamW<S>& opt, const FrameSequence<S>& past,
                const FrameSequence<S>& future, const TrainingConfig& tc, const RandomSource& rs,
                StepKey key = {}, const NoiseOracle<S>* oracle = nullptr) {
    std::vector<BatchItem<S>> batch{{&past, &future}};
    const double lr = cosine_restart_lr(tc.lr, static_cast<double>(key.epoch),
                                        static_cast<double>(tc.restart_cycle));
    return batch_training_step(model, opt, batch, tc, rs, key, lr, oracle);
}

template <typename S>
std::pair<FrameSequence<S>, FrameSequence<S>> split_clip(const FrameSequence<S>& clip,
                                                         Eigen::Index N, Eigen::Index M) {
    if (static_cast<Eigen::Index>(clip.size()) < N + M)
        throw std::invalid_argument("split_clip: clip has " + std::to_string(clip.size()) +
                                    " frames, need " + std::to_string(N + M));
    std::vector<Frame<S>> pf(clip.frames.begin(), clip.frames.begin() + N);
    std::vector<double> pt(clip.times.begin(), clip.times.begin() + N);
    std::vector<Frame<S>> ff(clip.frames.begin() + N, clip.frames.begin() + N + M);
    std::vector<double> ft(clip.times.begin() + N, clip.times.begin() + N + M);
    return {FrameSequence<S>(std::move(pf), std::move(pt)),
            FrameSequence<S>(std::move(ff), std::move(ft))};
}

struct LossRecord {
    Eigen::Index epoch;
    Eigen::Index step;
    double loss;
    double lr;
};

// Full training loop: seeded shuffle per epoch, cosine-with-restarts lr per
// step (fractional epochs), EMA after every step. checkpoint_fn (when set)
// runs after each epoch. Returns the per-step loss history.
template <typename S>
std::vector<LossRecord> train(
    STDiffModel<S>& model, AdamW<S>& opt, const VideoDataset<S>& data, const TrainingConfig& tc,
    Eigen::Index start_epoch = 0,
    const std::function<void(Eigen::Index epoch, Eigen::Index global_step)>& checkpoint_fn = {},
    const std::function<void(const LossRecord&)>& on_step = {}) {
    tc.validate();
    if (data.clips.empty()) throw std::invalid_argument("train: empty dataset");
    const RandomSource rs(tc.seed);

    const auto n = data.clips.size();
    const auto steps_per_epoch =
        static_cast<Eigen::Index>((n + static_cast<std::size_t>(tc.batch_size) - 1) /
                                  static_cast<std::size_t>(tc.batch_size));
    std::vector<LossRecord> history;

    // pre-split every clip once (views into the dataset would dangle)
    std::vector<std::pair<FrameSequence<S>, FrameSequence<S>>> pairs;
    pairs.reserve(n);
    for (const auto& clip : data.clips)
        pairs.push_back(split_clip(clip, tc.past_frames, tc.future_pool));

    Eigen::Index global_step = start_epoch * steps_per_epoch;
    for (Eigen::Index epoch = start_epoch; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle = rs.stream("shuffle", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle.uniform_int(0, i - 1)]);

        for (Eigen::Index s = 0; s < steps_per_epoch; ++s) {
            std::vector<BatchItem<S>> batch;
            for (Eigen::Index b = 0; b < tc.batch_size; ++b) {
                const std::size_t idx = static_cast<std::size_t>(s) *
                                            static_cast<std::size_t>(tc.batch_size) +
                                        static_cast<std::size_t>(b);
                if (idx >= n) break;
                batch.push_back({&pairs[order[idx]].first, &pairs[order[idx]].second});
            }
            const double epoch_t = static_cast<double>(epoch) +
                                   static_cast<double>(s) / static_cast<double>(steps_per_epoch);
            const double lr = cosine_restart_lr(tc.lr, epoch_t, static_cast<double>(tc.restart_cycle));
            const S loss = batch_training_step(model, opt, batch, tc, rs,
                                               StepKey{static_cast<std::uint64_t>(epoch),
                                                       static_cast<std::uint64_t>(s)},
                                               lr);
            LossRecord rec{epoch, global_step, static_cast<double>(loss), lr};
            history.push_back(rec);
            if (on_step) on_step(rec);
            ++global_step;
        }
        if (checkpoint_fn) checkpoint_fn(epoch, global_step);
    }
    return history;
}

}  // namespace stdiff

#endif
