#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stdiff/autodiff.hpp"
#include "stdiff/params.hpp"

#include "test_util.hpp"

using namespace stdiff;
using namespace stdiff::ad;
using testutil::check_gradient;
using testutil::random_tensor;

namespace {

// Weighted sum against a fixed random tensor turns any output into a scalar
// with nondegenerate gradients.
template <typename Build>
void check_op(Shape in_shape, Build&& build, std::uint64_t seed = 11, double lo = -1.0,
              double hi = 1.0, double eps = 1e-6, double rtol = 1e-5, double atol = 1e-8) {
    Rng rng = RandomSource(seed).stream("op_input");
    Tensor<double> x0 = random_tensor<double>(in_shape, rng, lo, hi);

    // probe output shape
    Tensor<double> wsum;
    {
        Tape<double> t;
        Var<double> out = build(t, t.leaf(x0, true));
        Rng wrng = RandomSource(seed).stream("op_weights");
        wsum = random_tensor<double>(out.shape(), wrng, -1.0, 1.0);
    }

    auto loss_of = [&](const Tensor<double>& x) {
        Tape<double> t;
        Var<double> out = build(t, t.leaf(x, true));
        Var<double> prod = mul_const(out, wsum);
        return sum_all(prod).value().data[0];
    };

    Tape<double> t;
    Var<double> xin = t.leaf(x0, true);
    Var<double> out = build(t, xin);
    Var<double> loss = sum_all(mul_const(out, wsum));
    t.backward(loss);
    Tensor<double> analytic = xin.node()->grad;

    check_gradient<double>(x0, loss_of, analytic, eps, rtol, atol);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    check_op(Shape::chw(2, 3, 3), [](Tape<double>& t, Var<double> x) {
        auto y = add_scalar(scale(x, 1.7), 0.3);
        return mul(y, y);
    });
    check_op(Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return sigmoid(x); });
    check_op(Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return tanh_op(x); });
    check_op(Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return silu(x); });
    check_op(Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return softplus(x); });
    // keep relu inputs away from the kink
    check_op(
        Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return relu(x); }, 13, 0.2, 1.0);
    check_op(
        Shape::chw(1, 4, 4), [](Tape<double>& t, Var<double> x) { return relu(x); }, 14, -1.0,
        -0.2);
}

TEST_CASE("softplus matches its closed forms") {
    Tape<double> t;
    Tensor<double> x(Shape{3});
    x.data << -40.0, 0.0, 40.0;
    auto y = softplus(t.leaf(x, false));
    CHECK(y.value().data[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y.value().data[1] == doctest::Approx(std::log(2.0)));
    CHECK(y.value().data[2] == doctest::Approx(40.0));
}

TEST_CASE("conv2d gradients wrt input, weight and bias") {
    const kernels::ConvSpec s1{3, 3, 1, 1};
    const kernels::ConvSpec s2{3, 3, 2, 1};
    Rng rng = RandomSource(3).stream("conv");
    Tensor<double> w = random_tensor<double>(Shape{4, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor<double> b = random_tensor<double>(Shape{4}, rng, -0.5, 0.5);
    Tensor<double> x = random_tensor<double>(Shape::chw(2, 6, 6), rng);

    // wrt input
    check_op(Shape::chw(2, 6, 6), [&](Tape<double>& t, Var<double> xin) {
        return conv2d(xin, t.constant(w), t.constant(b), s1);
    });
    check_op(Shape::chw(2, 6, 6), [&](Tape<double>& t, Var<double> xin) {
        return conv2d(xin, t.constant(w), t.constant(b), s2);
    });
    // wrt weight
    check_op(Shape{4, 2, 3, 3}, [&](Tape<double>& t, Var<double> wv) {
        return conv2d(t.constant(x), wv, t.constant(b), s1);
    });
    // wrt bias
    check_op(Shape{4}, [&](Tape<double>& t, Var<double> bv) {
        return conv2d(t.constant(x), t.constant(w), bv, s1);
    });
    // no-bias form
    check_op(Shape::chw(2, 6, 6), [&](Tape<double>& t, Var<double> xin) {
        return conv2d(xin, t.constant(w), Var<double>(), s1);
    });
}

TEST_CASE("conv2d stride-2 output dims") {
    Tape<double> t;
    Rng rng = RandomSource(9).stream("conv");
    auto x = t.constant(random_tensor<double>(Shape::chw(3, 8, 8), rng));
    auto w = t.constant(random_tensor<double>(Shape{5, 3, 3, 3}, rng));
    auto y = conv2d(x, w, Var<double>(), kernels::ConvSpec{3, 3, 2, 1});
    CHECK(y.shape() == Shape::chw(5, 4, 4));
}

TEST_CASE("pooling and resampling gradients") {
    check_op(Shape::chw(2, 4, 4), [](Tape<double>& t, Var<double> x) { return maxpool2(x); }, 21,
             // distinct values so the argmax is stable under the FD probe
             0.0, 1.0, 1e-7);
    check_op(Shape::chw(2, 3, 3), [](Tape<double>& t, Var<double> x) { return nearest_upsample2(x); });
    check_op(Shape::chw(2, 2, 2), [](Tape<double>& t, Var<double> x) { return bilinear_resize(x, 7, 5); });
    check_op(Shape::chw(2, 6, 6), [](Tape<double>& t, Var<double> x) { return bilinear_resize(x, 3, 4); });
}

TEST_CASE("group norm gradient and statistics") {
    check_op(Shape::chw(4, 3, 3), [](Tape<double>& t, Var<double> x) { return group_norm(x, 2); },
             31, -1.0, 1.0, 1e-6, 1e-4, 1e-7);

    Tape<double> t;
    Rng rng = RandomSource(8).stream("gn");
    auto x = t.constant(random_tensor<double>(Shape::chw(4, 5, 5), rng));
    auto y = group_norm(x, 2, 1e-12);
    const Eigen::Index n = 2 * 25;
    for (int g = 0; g < 2; ++g) {
        auto seg = y.value().data.segment(g * n, n);
        CHECK(seg.mean() == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(seg.square().mean() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("structure op gradients") {
    Rng rng = RandomSource(17).stream("aux");
    Tensor<double> other = random_tensor<double>(Shape::chw(3, 4, 4), rng);
    check_op(Shape::chw(2, 4, 4), [&](Tape<double>& t, Var<double> x) {
        return concat_channels(x, t.constant(other));
    });
    check_op(Shape::chw(2, 4, 4), [&](Tape<double>& t, Var<double> x) {
        return concat_channels(t.constant(other), x);
    });
    Tensor<double> vec = random_tensor<double>(Shape{3}, rng);
    check_op(Shape::chw(3, 4, 4), [&](Tape<double>& t, Var<double> x) {
        return broadcast_channel_add(x, t.constant(vec));
    });
    check_op(Shape{3}, [&](Tape<double>& t, Var<double> v) {
        return broadcast_channel_add(t.constant(other), v);
    });
    Tensor<double> gamma = random_tensor<double>(Shape{3}, rng, 0.5, 1.5);
    Tensor<double> beta = random_tensor<double>(Shape{3}, rng);
    check_op(Shape::chw(3, 4, 4), [&](Tape<double>& t, Var<double> x) {
        return channel_affine(x, t.constant(gamma), t.constant(beta));
    });
    check_op(Shape{3}, [&](Tape<double>& t, Var<double> g) {
        return channel_affine(t.constant(other), g, t.constant(beta));
    });
    check_op(Shape{3}, [&](Tape<double>& t, Var<double> b) {
        return channel_affine(t.constant(other), t.constant(gamma), b);
    });
}

TEST_CASE("linear gradients") {
    Rng rng = RandomSource(23).stream("lin");
    Tensor<double> w = random_tensor<double>(Shape{5, 7}, rng);
    Tensor<double> b = random_tensor<double>(Shape{5}, rng);
    Tensor<double> x = random_tensor<double>(Shape{7}, rng);
    check_op(Shape{7}, [&](Tape<double>& t, Var<double> xin) {
        return linear(xin, t.constant(w), t.constant(b));
    });
    check_op(Shape{5, 7}, [&](Tape<double>& t, Var<double> wv) {
        return linear(t.constant(x), wv, t.constant(b));
    });
    check_op(Shape{5}, [&](Tape<double>& t, Var<double> bv) {
        return linear(t.constant(x), t.constant(w), bv);
    });
}

TEST_CASE("mean squared error gradient and value") {
    Rng rng = RandomSource(29).stream("mse");
    Tensor<double> target = random_tensor<double>(Shape::chw(1, 4, 4), rng);
    Tensor<double> x0 = random_tensor<double>(Shape::chw(1, 4, 4), rng);

    auto loss_of = [&](const Tensor<double>& x) {
        Tape<double> t;
        return mean_sq_error(t.leaf(x, true), target).value().data[0];
    };
    Tape<double> t;
    auto xin = t.leaf(x0, true);
    auto loss = mean_sq_error(xin, target);
    CHECK(loss.value().data[0] ==
          doctest::Approx((x0.data - target.data).square().mean()).epsilon(1e-12));
    t.backward(loss);
    check_gradient<double>(x0, loss_of, xin.node()->grad, 1e-6, 1e-6, 1e-10);
}

TEST_CASE("shared parameter accumulates gradient across uses") {
    // f(w) = sum(w*x1) + sum(w*x2) -> dw = x1 + x2
    Rng rng = RandomSource(31).stream("shared");
    Tensor<double> x1 = random_tensor<double>(Shape{6}, rng);
    Tensor<double> x2 = random_tensor<double>(Shape{6}, rng);
    Tape<double> t;
    auto w = t.leaf(random_tensor<double>(Shape{6}, rng), true);
    auto loss = add(sum_all(mul_const(w, x1)), sum_all(mul_const(w, x2)));
    t.backward(loss);
    for (Eigen::Index i = 0; i < 6; ++i)
        CHECK(w.node()->grad.data[i] == doctest::Approx(x1.data[i] + x2.data[i]));
}

TEST_CASE("param registry declares, initializes and binds") {
    ParamRegistry<double> reg;
    reg.declare("a.w", Shape{4, 2, 3, 3}, Init::kaiming);
    reg.declare("a.b", Shape{4}, Init::zeros);
    reg.declare("g", Shape{4}, Init::ones);
    CHECK_THROWS_AS(reg.declare("a.w", Shape{1}, Init::zeros), std::invalid_argument);
    reg.allocate();
    reg.init_all(RandomSource(1).stream("init"));
    CHECK(reg.size() == 4 * 2 * 9 + 4 + 4);
    CHECK(reg.values().segment(72, 4).abs().maxCoeff() == 0.0);
    CHECK((reg.values().segment(76, 4) == 1.0).all());
    CHECK(reg.values().segment(0, 72).abs().maxCoeff() > 0.0);

    // two registries with the same seed initialize identically
    ParamRegistry<double> reg2;
    reg2.declare("a.w", Shape{4, 2, 3, 3}, Init::kaiming);
    reg2.declare("a.b", Shape{4}, Init::zeros);
    reg2.declare("g", Shape{4}, Init::ones);
    reg2.allocate();
    reg2.init_all(RandomSource(1).stream("init"));
    CHECK((reg.values() == reg2.values()).all());

    // bound params: same node reused, grads land at the right offset
    Tape<double> t;
    auto src = ParamSource<double>::live(reg);
    BoundParams<double> p(t, src);
    auto w1 = p("a.w");
    auto w2 = p("a.w");
    CHECK(w1.node() == w2.node());
    auto loss = sum_all(mul(w1, w2));
    t.backward(loss);
    Eigen::Array<double, Eigen::Dynamic, 1> grads =
        Eigen::Array<double, Eigen::Dynamic, 1>::Zero(reg.size());
    t.accumulate_param_grads(grads);
    for (Eigen::Index i = 0; i < 72; ++i)
        CHECK(grads[i] == doctest::Approx(2.0 * reg.values()[i]));
    CHECK(grads.segment(72, 8).abs().maxCoeff() == 0.0);
}

TEST_CASE("grad disabled tape skips closures") {
    ParamRegistry<double> reg;
    reg.declare("w", Shape{3}, Init::ones);
    reg.allocate();
    reg.init_all(RandomSource(2).stream("init"));
    Tape<double> t(false);
    BoundParams<double> p(t, ParamSource<double>::live(reg));
    auto y = sum_all(scale(p("w"), 2.0));
    CHECK(y.value().data[0] == doctest::Approx(6.0));
    CHECK_FALSE(y.node()->needs_grad);
    CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}
