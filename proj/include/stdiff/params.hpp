#ifndef STDIFF_PARAMS_HPP
#define STDIFF_PARAMS_HPP

#include "stdiff/autodiff.hpp"
#include "stdiff/random.hpp"
#include "stdiff/tensor.hpp"

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

namespace stdiff {

enum class Init { kaiming, zeros, ones };

// Name-indexed manifest of all learnable parameters, backed by one flat
// array. Optimizer, EMA, checkpointing and finite-difference probes all
// operate on the flat view.
template <typename S>
class ParamRegistry {
public:
    using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

    struct Entry {
        std::string name;
        Eigen::Index offset;
        Shape shape;
        Init init;
    };

    Eigen::Index declare(const std::string& name, Shape shape, Init init) {
        if (by_name_.count(name)) throw std::invalid_argument("param declared twice: " + name);
        const Eigen::Index off = total_;
        by_name_.emplace(name, entries_.size());
        entries_.push_back(Entry{name, off, std::move(shape), init});
        total_ += entries_.back().shape.numel();
        return off;
    }

    void allocate() { values_ = Vec::Zero(total_); }

    // Deterministic init in declaration order. Kaiming-uniform uses fan-in
    // from the trailing dims (Cin*kh*kw for conv kernels, in for linears).
    void init_all(Rng rng) {
        for (const auto& e : entries_) {
            auto seg = values_.segment(e.offset, e.shape.numel());
            switch (e.init) {
                case Init::zeros: seg.setZero(); break;
                case Init::ones: seg.setConstant(S(1)); break;
                case Init::kaiming: {
                    Eigen::Index fan_in = 1;
                    for (Eigen::Index d = 1; d < e.shape.rank(); ++d) fan_in *= e.shape[d];
                    const double bound = std::sqrt(3.0) * std::sqrt(2.0 / static_cast<double>(fan_in));
                    for (Eigen::Index i = 0; i < seg.size(); ++i)
                        seg[i] = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
                    break;
                }
            }
        }
    }

    const Entry& entry(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::invalid_argument("unknown param: " + name);
        return entries_[it->second];
    }

    const std::vector<Entry>& entries() const { return entries_; }
    Eigen::Index size() const { return total_; }

    Vec& values() { return values_; }
    const Vec& values() const { return values_; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> by_name_;
    Eigen::Index total_ = 0;
    Vec values_;
};

// A registry manifest paired with one concrete value vector (live weights or
// the EMA shadow) and a trainability flag.
template <typename S>
struct ParamSource {
    const ParamRegistry<S>* registry = nullptr;
    const Eigen::Array<S, Eigen::Dynamic, 1>* values = nullptr;
    bool trainable = true;

    static ParamSource live(const ParamRegistry<S>& r) { return {&r, &r.values(), true}; }
    static ParamSource frozen(const ParamRegistry<S>& r,
                              const Eigen::Array<S, Eigen::Dynamic, 1>& v) {
        return {&r, &v, false};
    }
};

// Per-tape binding of a ParamSource: fetches each named parameter once and
// reuses the node, so shared weights accumulate their gradient correctly.
template <typename S>
class BoundParams {
public:
    BoundParams(ad::Tape<S>& tape, const ParamSource<S>& src) : tape_(&tape), src_(src) {}

    ad::Var<S> operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        const auto& e = src_.registry->entry(name);
        Tensor<S> t(e.shape, src_.values->segment(e.offset, e.shape.numel()));
        ad::Var<S> v = tape_->leaf(std::move(t), src_.trainable);
        v.node()->param_offset = e.offset;
        cache_.emplace(name, v);
        return v;
    }

    ad::Tape<S>& tape() { return *tape_; }

private:
    ad::Tape<S>* tape_;
    ParamSource<S> src_;
    std::unordered_map<std::string, ad::Var<S>> cache_;
};

}  // namespace stdiff

#endif
