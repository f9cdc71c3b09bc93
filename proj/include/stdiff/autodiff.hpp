#ifndef STDIFF_AUTODIFF_HPP
#define STDIFF_AUTODIFF_HPP

#include "stdiff/kernels.hpp"
#include "stdiff/tensor.hpp"

#include <deque>
#include <functional>
#include <utility>
#include <vector>

// Reverse-mode autodiff over Tensor<S>. A Tape owns the nodes of one forward
// computation; backward() walks them in reverse creation order. All neural
// nets in this project are written once against Var<S> and run both with
// gradients (training) and without (inference, grads disabled).
namespace stdiff::ad {

template <typename S>
class Tape;

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    bool grad_live = false;
    Eigen::Index param_offset = -1;  // >= 0 for parameter leaves
    std::function<void()> backprop;
};

template <typename S>
class Var {
public:
    Var() = default;
    Var(Node<S>* n, Tape<S>* t) : node_(n), tape_(t) {}

    const Tensor<S>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    Node<S>* node() const { return node_; }
    Tape<S>* tape() const { return tape_; }
    bool valid() const { return node_ != nullptr; }

private:
    Node<S>* node_ = nullptr;
    Tape<S>* tape_ = nullptr;
};

template <typename S>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var<S> constant(Tensor<S> v) { return make(std::move(v), false); }

    Var<S> leaf(Tensor<S> v, bool needs_grad) { return make(std::move(v), needs_grad && grad_enabled_); }

    Var<S> make(Tensor<S> v, bool needs_grad) {
        nodes_.emplace_back();
        Node<S>& n = nodes_.back();
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        return Var<S>(&n, this);
    }

    static Tensor<S>& grad_of(Node<S>* n) {
        if (!n->grad_live) {
            n->grad = Tensor<S>::zeros(n->value.shape);
            n->grad_live = true;
        }
        return n->grad;
    }

    void backward(Var<S> loss) {
        if (loss.value().numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        if (!loss.node()->needs_grad)
            throw std::invalid_argument("backward: loss does not depend on any differentiable leaf");
        grad_of(loss.node()).data.setConstant(S(1));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if (it->needs_grad && it->grad_live && it->backprop) it->backprop();
    }

    // Adds gradients of all parameter leaves into a flat vector by offset.
    void accumulate_param_grads(Eigen::Array<S, Eigen::Dynamic, 1>& out) const {
        for (const auto& n : nodes_)
            if (n.param_offset >= 0 && n.grad_live)
                out.segment(n.param_offset, n.value.numel()) += n.grad.data;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::deque<Node<S>> nodes_;
    bool grad_enabled_;
};

namespace detail {

template <typename S, typename F>
Var<S> unary(Var<S> a, Tensor<S> value, F&& df) {
    // df(grad_out, a_node) adds into the parent's grad
    Tape<S>* t = a.tape();
    Var<S> out = t->make(std::move(value), a.node()->needs_grad);
    if (out.node()->needs_grad) {
        Node<S>* an = a.node();
        Node<S>* on = out.node();
        on->backprop = [an, on, df = std::forward<F>(df)]() { df(on->grad, an); };
    }
    return out;
}

template <typename S, typename F>
Var<S> binary(Var<S> a, Var<S> b, Tensor<S> value, F&& df) {
    Tape<S>* t = a.tape();
    const bool ng = a.node()->needs_grad || b.node()->needs_grad;
    Var<S> out = t->make(std::move(value), ng);
    if (ng) {
        Node<S>* an = a.node();
        Node<S>* bn = b.node();
        Node<S>* on = out.node();
        on->backprop = [an, bn, on, df = std::forward<F>(df)]() { df(on->grad, an, bn); };
    }
    return out;
}

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* who) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::require_same_shape(a, b, "add");
    Tensor<S> v(a.shape(), a.value().data + b.value().data);
    return detail::binary(a, b, std::move(v), [](const Tensor<S>& g, Node<S>* an, Node<S>* bn) {
        if (an->needs_grad) Tape<S>::grad_of(an).data += g.data;
        if (bn->needs_grad) Tape<S>::grad_of(bn).data += g.data;
    });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<S> v(a.shape(), a.value().data - b.value().data);
    return detail::binary(a, b, std::move(v), [](const Tensor<S>& g, Node<S>* an, Node<S>* bn) {
        if (an->needs_grad) Tape<S>::grad_of(an).data += g.data;
        if (bn->needs_grad) Tape<S>::grad_of(bn).data -= g.data;
    });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<S> v(a.shape(), a.value().data * b.value().data);
    return detail::binary(a, b, std::move(v), [](const Tensor<S>& g, Node<S>* an, Node<S>* bn) {
        if (an->needs_grad) Tape<S>::grad_of(an).data += g.data * bn->value.data;
        if (bn->needs_grad) Tape<S>::grad_of(bn).data += g.data * an->value.data;
    });
}

template <typename S>
Var<S> scale(Var<S> a, S s) {
    Tensor<S> v(a.shape(), a.value().data * s);
    return detail::unary(a, std::move(v), [s](const Tensor<S>& g, Node<S>* an) {
        Tape<S>::grad_of(an).data += g.data * s;
    });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S s) {
    Tensor<S> v(a.shape(), a.value().data + s);
    return detail::unary(a, std::move(v), [](const Tensor<S>& g, Node<S>* an) {
        Tape<S>::grad_of(an).data += g.data;
    });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, S s) { return scale(a, s); }
template <typename S>
Var<S> operator*(S s, Var<S> a) { return scale(a, s); }

// Multiply / add with a tensor that is constant w.r.t. the tape.
template <typename S>
Var<S> mul_const(Var<S> a, const Tensor<S>& t) {
    return mul(a, a.tape()->constant(t));
}
template <typename S>
Var<S> add_const(Var<S> a, const Tensor<S>& t) {
    return add(a, a.tape()->constant(t));
}

// ---- activations ----

template <typename S>
Var<S> relu(Var<S> a) {
    Tensor<S> v(a.shape(), a.value().data.max(S(0)));
    return detail::unary(a, std::move(v), [](const Tensor<S>& g, Node<S>* an) {
        Tape<S>::grad_of(an).data += g.data * (an->value.data > S(0)).template cast<S>();
    });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
    Tensor<S> v(a.shape(), (S(1) / (S(1) + (-a.value().data).exp())));
    Var<S> out = detail::unary(a, std::move(v), [](const Tensor<S>&, Node<S>*) {});
    Node<S>* on = out.node();
    Node<S>* an = a.node();
    if (on->needs_grad)
        on->backprop = [on, an]() {
            Tape<S>::grad_of(an).data += on->grad.data * on->value.data * (S(1) - on->value.data);
        };
    return out;
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
    Tensor<S> v(a.shape(), a.value().data.tanh());
    Var<S> out = detail::unary(a, std::move(v), [](const Tensor<S>&, Node<S>*) {});
    Node<S>* on = out.node();
    Node<S>* an = a.node();
    if (on->needs_grad)
        on->backprop = [on, an]() {
            Tape<S>::grad_of(an).data += on->grad.data * (S(1) - on->value.data.square());
        };
    return out;
}

template <typename S>
Var<S> silu(Var<S> a) {
    auto sig = (S(1) / (S(1) + (-a.value().data).exp())).eval();
    Tensor<S> v(a.shape(), a.value().data * sig);
    return detail::unary(a, std::move(v), [](const Tensor<S>& g, Node<S>* an) {
        auto s = (S(1) / (S(1) + (-an->value.data).exp())).eval();
        Tape<S>::grad_of(an).data += g.data * s * (S(1) + an->value.data * (S(1) - s));
    });
}

template <typename S>
Var<S> softplus(Var<S> a) {
    // stable: max(x,0) + log1p(exp(-|x|))
    auto x = a.value().data;
    Tensor<S> v(a.shape(), x.max(S(0)) + (-(x.abs())).exp().log1p());
    return detail::unary(a, std::move(v), [](const Tensor<S>& g, Node<S>* an) {
        Tape<S>::grad_of(an).data += g.data / (S(1) + (-an->value.data).exp());
    });
}

// ---- structure ops ----

template <typename S>
Var<S> concat_channels(Var<S> a, Var<S> b) {
    require_rank3(a.value(), "concat_channels");
    require_rank3(b.value(), "concat_channels");
    if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
        throw std::invalid_argument("concat_channels: spatial mismatch " + a.shape().str() +
                                    " vs " + b.shape().str());
    const Eigen::Index na = a.value().numel(), nb = b.value().numel();
    Tensor<S> v(Shape::chw(a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]));
    v.data.segment(0, na) = a.value().data;
    v.data.segment(na, nb) = b.value().data;
    return detail::binary(a, b, std::move(v), [na, nb](const Tensor<S>& g, Node<S>* an, Node<S>* bn) {
        if (an->needs_grad) Tape<S>::grad_of(an).data += g.data.segment(0, na);
        if (bn->needs_grad) Tape<S>::grad_of(bn).data += g.data.segment(na, nb);
    });
}

// Adds a length-C vector across each channel plane of a CHW map.
template <typename S>
Var<S> broadcast_channel_add(Var<S> x, Var<S> v) {
    require_rank3(x.value(), "broadcast_channel_add");
    const Eigen::Index C = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    if (v.value().numel() != C)
        throw std::invalid_argument("broadcast_channel_add: vector size mismatch");
    Tensor<S> out = x.value();
    for (Eigen::Index c = 0; c < C; ++c) out.data.segment(c * hw, hw) += v.value().data[c];
    return detail::binary(x, v, std::move(out), [C, hw](const Tensor<S>& g, Node<S>* xn, Node<S>* vn) {
        if (xn->needs_grad) Tape<S>::grad_of(xn).data += g.data;
        if (vn->needs_grad) {
            auto& gv = Tape<S>::grad_of(vn);
            for (Eigen::Index c = 0; c < C; ++c) gv.data[c] += g.data.segment(c * hw, hw).sum();
        }
    });
}

// Per-channel affine y_c = x_c * gamma[c] + beta[c].
template <typename S>
Var<S> channel_affine(Var<S> x, Var<S> gamma, Var<S> beta) {
    require_rank3(x.value(), "channel_affine");
    const Eigen::Index C = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    Tensor<S> out = x.value();
    for (Eigen::Index c = 0; c < C; ++c)
        out.data.segment(c * hw, hw) = out.data.segment(c * hw, hw) * gamma.value().data[c] +
                                       beta.value().data[c];
    Tape<S>* t = x.tape();
    const bool ng = x.node()->needs_grad || gamma.node()->needs_grad || beta.node()->needs_grad;
    Var<S> o = t->make(std::move(out), ng);
    if (ng) {
        Node<S>* xn = x.node();
        Node<S>* gn = gamma.node();
        Node<S>* bn = beta.node();
        Node<S>* on = o.node();
        on->backprop = [xn, gn, bn, on, C, hw]() {
            const auto& g = on->grad.data;
            if (xn->needs_grad) {
                auto& gx = Tape<S>::grad_of(xn);
                for (Eigen::Index c = 0; c < C; ++c)
                    gx.data.segment(c * hw, hw) += g.segment(c * hw, hw) * gn->value.data[c];
            }
            if (gn->needs_grad) {
                auto& gg = Tape<S>::grad_of(gn);
                for (Eigen::Index c = 0; c < C; ++c)
                    gg.data[c] += (g.segment(c * hw, hw) * xn->value.data.segment(c * hw, hw)).sum();
            }
            if (bn->needs_grad) {
                auto& gb = Tape<S>::grad_of(bn);
                for (Eigen::Index c = 0; c < C; ++c) gb.data[c] += g.segment(c * hw, hw).sum();
            }
        };
    }
    return o;
}

// ---- neural net ops ----

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const kernels::ConvSpec& cs) {
    Tensor<S> empty_bias;
    const Tensor<S>& bias = b.valid() ? b.value() : empty_bias;
    Tensor<S> y = kernels::conv2d_forward(x.value(), w.value(), bias, cs);
    Tape<S>* t = x.tape();
    const bool ng = x.node()->needs_grad || w.node()->needs_grad || (b.valid() && b.node()->needs_grad);
    Var<S> out = t->make(std::move(y), ng);
    if (ng) {
        Node<S>* xn = x.node();
        Node<S>* wn = w.node();
        Node<S>* bn = b.valid() ? b.node() : nullptr;
        Node<S>* on = out.node();
        on->backprop = [xn, wn, bn, on, cs]() {
            Tensor<S>* dx = xn->needs_grad ? &Tape<S>::grad_of(xn) : nullptr;
            Tensor<S>* dw = wn->needs_grad ? &Tape<S>::grad_of(wn) : nullptr;
            Tensor<S>* db = (bn && bn->needs_grad) ? &Tape<S>::grad_of(bn) : nullptr;
            kernels::conv2d_backward(xn->value, wn->value, on->grad, cs, dx, dw, db);
        };
    }
    return out;
}

template <typename S>
Var<S> maxpool2(Var<S> x) {
    std::vector<Eigen::Index> argmax;
    Tensor<S> y = kernels::maxpool2_forward(x.value(), argmax);
    return detail::unary(x, std::move(y),
                         [argmax = std::move(argmax)](const Tensor<S>& g, Node<S>* xn) {
                             kernels::maxpool2_backward(g, argmax, Tape<S>::grad_of(xn));
                         });
}

template <typename S>
Var<S> nearest_upsample2(Var<S> x) {
    Tensor<S> y = kernels::nearest_upsample2_forward(x.value());
    return detail::unary(x, std::move(y), [](const Tensor<S>& g, Node<S>* xn) {
        kernels::nearest_upsample2_backward(g, Tape<S>::grad_of(xn));
    });
}

template <typename S>
Var<S> bilinear_resize(Var<S> x, Eigen::Index Ho, Eigen::Index Wo) {
    if (x.shape()[1] == Ho && x.shape()[2] == Wo) return x;
    Tensor<S> y = kernels::bilinear_resize_forward(x.value(), Ho, Wo);
    return detail::unary(x, std::move(y), [](const Tensor<S>& g, Node<S>* xn) {
        kernels::bilinear_resize_backward(g, Tape<S>::grad_of(xn));
    });
}

template <typename S>
Var<S> group_norm(Var<S> x, Eigen::Index groups, S eps = S(1e-5)) {
    std::vector<S> mean, rstd;
    Tensor<S> y = kernels::groupnorm_forward(x.value(), groups, eps, mean, rstd);
    return detail::unary(x, std::move(y),
                         [groups, mean = std::move(mean), rstd = std::move(rstd)](
                             const Tensor<S>& g, Node<S>* xn) {
                             kernels::groupnorm_backward(xn->value, mean, rstd, g, groups,
                                                         Tape<S>::grad_of(xn));
                         });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
    Tensor<S> empty_bias;
    Tensor<S> y = kernels::linear_forward(x.value(), w.value(), b.valid() ? b.value() : empty_bias);
    Tape<S>* t = x.tape();
    const bool ng = x.node()->needs_grad || w.node()->needs_grad || (b.valid() && b.node()->needs_grad);
    Var<S> out = t->make(std::move(y), ng);
    if (ng) {
        Node<S>* xn = x.node();
        Node<S>* wn = w.node();
        Node<S>* bn = b.valid() ? b.node() : nullptr;
        Node<S>* on = out.node();
        on->backprop = [xn, wn, bn, on]() {
            Tensor<S>* dx = xn->needs_grad ? &Tape<S>::grad_of(xn) : nullptr;
            Tensor<S>* dw = wn->needs_grad ? &Tape<S>::grad_of(wn) : nullptr;
            Tensor<S>* db = (bn && bn->needs_grad) ? &Tape<S>::grad_of(bn) : nullptr;
            kernels::linear_backward(xn->value, wn->value, on->grad, dx, dw, db);
        };
    }
    return out;
}

// ---- reductions ----

template <typename S>
Var<S> sum_all(Var<S> x) {
    Tensor<S> v(Shape{1});
    v.data[0] = x.value().data.sum();
    return detail::unary(x, std::move(v), [](const Tensor<S>& g, Node<S>* xn) {
        Tape<S>::grad_of(xn).data += g.data[0];
    });
}

// Mean over elements of (x - target)^2 against a constant target.
template <typename S>
Var<S> mean_sq_error(Var<S> x, const Tensor<S>& target) {
    require_shape(target, x.shape(), "mean_sq_error");
    const S inv_n = S(1) / static_cast<S>(x.value().numel());
    Tensor<S> v(Shape{1});
    v.data[0] = (x.value().data - target.data).square().sum() * inv_n;
    return detail::unary(x, std::move(v), [target, inv_n](const Tensor<S>& g, Node<S>* xn) {
        Tape<S>::grad_of(xn).data +=
            g.data[0] * S(2) * inv_n * (xn->value.data - target.data);
    });
}

}  // namespace stdiff::ad

#endif
