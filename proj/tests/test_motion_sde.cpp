#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "stdiff/motion_sde.hpp"

#include <cmath>

#include "test_util.hpp"

using namespace stdiff;
using namespace stdiff::ad;
using testutil::random_tensor;

namespace {

using TT = Tensor<double>;
using Pair = std::pair<TT, TT>;

ParamRegistry<double> make_net(const DriftDiffusionConfig& cfg, std::uint64_t seed,
                               bool random_heads = false) {
    ParamRegistry<double> reg;
    declare_drift_diffusion(reg, cfg);
    reg.allocate();
    reg.init_all(RandomSource(seed).stream("init"));
    if (random_heads) {
        Rng hr = RandomSource(seed).stream("heads");
        for (const char* name : {"sde.mu.w", "sde.mu.b", "sde.sigma.w", "sde.sigma.b"}) {
            const auto& e = reg.entry(name);
            for (Eigen::Index i = 0; i < e.shape.numel(); ++i)
                reg.values()[e.offset + i] = 0.3 * (hr.uniform() * 2.0 - 1.0);
        }
    }
    return reg;
}

}  // namespace

TEST_CASE("solver config validation") {
    SdeSolverConfig ok;
    ok.validate();  // euler_heun + stratonovich
    SdeSolverConfig em{SdeMethod::euler_maruyama, SdeCalculus::ito, 0.1};
    em.validate();
    SdeSolverConfig bad1{SdeMethod::euler_heun, SdeCalculus::ito, 0.1};
    CHECK_THROWS_AS(bad1.validate(), std::invalid_argument);
    SdeSolverConfig bad2{SdeMethod::euler_maruyama, SdeCalculus::stratonovich, 0.1};
    CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
    SdeSolverConfig bad3;
    bad3.dt = 0.0;
    CHECK_THROWS_AS(bad3.validate(), std::invalid_argument);
}

TEST_CASE("zero-initialized net gives mu = 0, sigma = ln 2") {
    DriftDiffusionConfig cfg{4, 6, 4, 4};
    ParamRegistry<double> reg;
    declare_drift_diffusion(reg, cfg);
    reg.allocate();  // everything zero
    Tape<double> t(false);
    BoundParams<double> p(t, ParamSource<double>::live(reg));
    Rng rng = RandomSource(1).stream("m");
    auto m = t.constant(random_tensor<double>(Shape::chw(4, 4, 4), rng));
    auto [mu, sigma] = drift_diffusion(p, cfg, m);
    CHECK(mu.value().data.abs().maxCoeff() == 0.0);
    CHECK((sigma.value().data - std::log(2.0)).abs().maxCoeff() < 1e-12);

    // kaiming trunk with the default zero heads behaves the same
    auto reg2 = make_net(cfg, 2);
    BoundParams<double> p2(t, ParamSource<double>::live(reg2));
    auto [mu2, sigma2] = drift_diffusion(p2, cfg, m);
    CHECK(mu2.value().data.abs().maxCoeff() == 0.0);
    CHECK((sigma2.value().data - std::log(2.0)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("sigma head has a softplus floor and the net is deterministic") {
    DriftDiffusionConfig cfg{4, 6, 2, 2};
    auto reg = make_net(cfg, 3, true);
    const auto& sb = reg.entry("sde.sigma.b");
    reg.values().segment(sb.offset, sb.shape.numel()).setConstant(-50.0);
    const auto& sw = reg.entry("sde.sigma.w");
    reg.values().segment(sw.offset, sw.shape.numel()).setZero();

    Tape<double> t(false);
    BoundParams<double> p(t, ParamSource<double>::live(reg));
    Rng rng = RandomSource(5).stream("m");
    auto m = t.constant(random_tensor<double>(Shape::chw(4, 2, 2), rng));
    auto [mu, sigma] = drift_diffusion(p, cfg, m);
    CHECK(sigma.value().data.maxCoeff() >= 0.0);
    CHECK(sigma.value().data.maxCoeff() < 1e-20);

    auto [mu2, sigma2] = drift_diffusion(p, cfg, m);
    CHECK((mu.value().data == mu2.value().data).all());
    CHECK((sigma.value().data == sigma2.value().data).all());

    auto wrong = t.constant(Tensor<double>::zeros(Shape::chw(4, 3, 3)));
    CHECK_THROWS_AS(drift_diffusion(p, cfg, wrong), std::invalid_argument);
}

TEST_CASE("constant drift with zero diffusion integrates exactly") {
    // grid-friendly values: every partial sum is representable
    TT m0(Shape{4});
    m0.data << 0.375, -0.25, 1.125, 0.0;
    auto f = [](const TT& m) {
        return Pair{TT::constant(m.shape, 0.5), TT::zeros(m.shape)};
    };
    SdeSolverConfig cfg;
    cfg.dt = 0.25;
    Rng rng = RandomSource(7).stream("w");
    TT out = sde_integrate<double>(f, m0, 0.0, 2.0, cfg, rng);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(out.data[i] == m0.data[i] + 1.0);
}

TEST_CASE("wiener moments: mu=0, sigma=1 over unit time") {
    // one independent path per element under diagonal noise
    const Eigen::Index n = 10000;
    auto f = [](const TT& m) {
        return Pair{TT::zeros(m.shape), TT::constant(m.shape, 1.0)};
    };
    SdeSolverConfig cfg;  // euler_heun, dt = 0.1
    Rng rng = RandomSource(11).stream("wiener");
    TT out = sde_integrate<double>(f, TT::zeros(Shape{n}), 0.0, 1.0, cfg, rng);
    const double mean = out.data.mean();
    const double var = (out.data - mean).square().sum() / static_cast<double>(n - 1);
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("stratonovich linear sde matches the closed-form mean") {
    // dX = sigma X o dW has solution X_t = X_0 exp(sigma W_t), so
    // E[X_1] = exp(sigma^2/2) = exp(0.045) ~= 1.0460278 for sigma = 0.3.
    const Eigen::Index n = 50000;
    const double sig = 0.3;
    auto f = [sig](const TT& m) {
        return Pair{TT::zeros(m.shape), TT(m.shape, sig * m.data)};
    };
    SdeSolverConfig cfg;
    Rng rng = RandomSource(13).stream("wiener");
    TT out = sde_integrate<double>(f, TT::constant(Shape{n}, 1.0), 0.0, 1.0, cfg, rng);
    const double oracle = std::exp(sig * sig / 2.0);
    const double mean = out.data.mean();
    const double sd = std::sqrt((out.data - mean).square().sum() / static_cast<double>(n - 1));
    const double se = sd / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - oracle) < 3.0 * se);
}

TEST_CASE("zero diffusion: euler_maruyama equals forward euler bitwise") {
    Rng mrng = RandomSource(17).stream("m0");
    TT m0 = random_tensor<double>(Shape::chw(2, 3, 3), mrng);
    auto f = [](const TT& m) {
        return Pair{TT(m.shape, m.data.tanh() * 0.7 - 0.2 * m.data), TT::zeros(m.shape)};
    };
    SdeSolverConfig cfg{SdeMethod::euler_maruyama, SdeCalculus::ito, 0.1};
    Rng rng = RandomSource(19).stream("w");
    TT a = sde_integrate<double>(f, m0, 0.0, 1.0, cfg, rng);
    TT b = ode_integrate<double>(f, m0, 0.0, 1.0, 0.1);
    CHECK((a.data == b.data).all());
}

TEST_CASE("zero diffusion makes euler_heun seed-independent") {
    Rng mrng = RandomSource(23).stream("m0");
    TT m0 = random_tensor<double>(Shape{6}, mrng);
    auto f = [](const TT& m) {
        return Pair{TT(m.shape, -0.4 * m.data), TT::zeros(m.shape)};
    };
    SdeSolverConfig cfg;
    Rng r1 = RandomSource(100).stream("w");
    Rng r2 = RandomSource(200).stream("w");
    TT a = sde_integrate<double>(f, m0, 0.0, 1.0, cfg, r1);
    TT b = sde_integrate<double>(f, m0, 0.0, 1.0, cfg, r2);
    CHECK((a.data == b.data).all());
}

TEST_CASE("step count contract: ceil((t1-t0)/dt) evaluations per stage") {
    int calls = 0;
    auto f = [&calls](const TT& m) {
        ++calls;
        return Pair{TT::zeros(m.shape), TT::constant(m.shape, 0.1)};
    };
    TT m0 = TT::zeros(Shape{2});
    Rng rng = RandomSource(29).stream("w");

    SdeSolverConfig em{SdeMethod::euler_maruyama, SdeCalculus::ito, 0.3};
    calls = 0;
    sde_integrate<double>(f, m0, 0.0, 1.0, em, rng);
    CHECK(calls == 4);  // ceil(1/0.3) = 4, one eval per substep

    SdeSolverConfig heun;
    heun.dt = 0.25;
    calls = 0;
    sde_integrate<double>(f, m0, 0.0, 1.0, heun, rng);
    CHECK(calls == 8);  // 4 predictor + 4 corrector

    calls = 0;
    ode_integrate<double>(f, m0, 0.0, 1.0, 0.1);
    CHECK(calls == 10);

    // exact multiples do not gain a spurious extra substep
    calls = 0;
    ode_integrate<double>(f, m0, 0.0, 3.0, 0.3);
    CHECK(calls == 10);
}

TEST_CASE("ode semigroup property is bitwise for grid-aligned spans") {
    Rng mrng = RandomSource(31).stream("m0");
    TT m0 = random_tensor<double>(Shape::chw(2, 2, 2), mrng);
    auto f = [](const TT& m) {
        return Pair{TT(m.shape, m.data.sin() * 0.5 - 0.1 * m.data), TT::zeros(m.shape)};
    };
    const double dt = 0.25;
    TT direct = ode_integrate<double>(f, m0, 0.0, 2.0, dt);
    TT first = ode_integrate<double>(f, m0, 0.0, 1.0, dt);
    TT composed = ode_integrate<double>(f, first, 1.0, 2.0, dt);
    CHECK((direct.data == composed.data).all());
}

TEST_CASE("ode continuity bound over small steps") {
    DriftDiffusionConfig cfg{4, 6, 2, 2};
    auto reg = make_net(cfg, 37, true);
    Rng mrng = RandomSource(41).stream("m0");
    Tensor<double> m0 = random_tensor<double>(Shape::chw(4, 2, 2), mrng);

    for (double delta : {0.1, 0.05, 0.025}) {
        Tape<double> t(false);
        BoundParams<double> p(t, ParamSource<double>::live(reg));
        auto m0v = t.constant(m0);
        auto [mu, sigma] = drift_diffusion(p, cfg, m0v);
        const double sup_mu = std::sqrt(mu.value().data.square().sum());
        auto out = ode_integrate_net(p, cfg, m0v, 0.0, delta, 0.1);
        const double dist = std::sqrt((out.value().data - m0.data).square().sum());
        CHECK(dist <= sup_mu * delta + 1e-12);
    }
}

TEST_CASE("ode closed forms") {
    TT m0(Shape{3});
    m0.data << 0.5, -1.0, 2.0;
    auto fz = [](const TT& m) { return Pair{TT::zeros(m.shape), TT::zeros(m.shape)}; };
    TT out = ode_integrate<double>(fz, m0, 0.0, 1.0, 0.1);
    CHECK((out.data == m0.data).all());

    auto fm = [](const TT& m) { return Pair{TT(m.shape, -m.data), TT::zeros(m.shape)}; };
    TT one = ode_integrate<double>(fm, m0, 0.0, 0.25, 0.25);
    for (Eigen::Index i = 0; i < 3; ++i)
        CHECK(one.data[i] == doctest::Approx(0.75 * m0.data[i]).epsilon(1e-15));
}

TEST_CASE("integration argument and numeric errors") {
    TT m0 = TT::zeros(Shape{2});
    auto f = [](const TT& m) { return Pair{TT::zeros(m.shape), TT::zeros(m.shape)}; };
    SdeSolverConfig cfg;
    Rng rng = RandomSource(43).stream("w");
    CHECK_THROWS_AS(sde_integrate<double>(f, m0, 1.0, 1.0, cfg, rng), std::invalid_argument);
    CHECK_THROWS_AS(sde_integrate<double>(f, m0, 2.0, 1.0, cfg, rng), std::invalid_argument);

    auto fbad = [](const TT& m) {
        return Pair{TT::constant(m.shape, std::numeric_limits<double>::infinity()),
                    TT::zeros(m.shape)};
    };
    try {
        sde_integrate<double>(fbad, m0, 0.0, 1.0, cfg, rng);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("substep") != std::string::npos);
    }
}

TEST_CASE("seed determinism of the stochastic path") {
    DriftDiffusionConfig cfg{4, 6, 2, 2};
    auto reg = make_net(cfg, 47, true);
    Rng mrng = RandomSource(53).stream("m0");
    Tensor<double> m0 = random_tensor<double>(Shape::chw(4, 2, 2), mrng);
    SdeSolverConfig scfg;

    auto run = [&](std::uint64_t seed) {
        Tape<double> t(false);
        BoundParams<double> p(t, ParamSource<double>::live(reg));
        Rng rng = RandomSource(seed).stream("wiener");
        return sde_integrate_net(p, cfg, t.constant(m0), 0.0, 1.5, scfg, rng).value();
    };
    auto a = run(7);
    auto b = run(7);
    auto c = run(8);
    CHECK((a.data == b.data).all());
    CHECK((a.data - c.data).abs().maxCoeff() > 0.0);
}

TEST_CASE("unrolled sde gradients match finite differences with frozen noise") {
    DriftDiffusionConfig cfg{4, 6, 4, 4};
    auto reg = make_net(cfg, 59, true);
    Rng mrng = RandomSource(61).stream("m0");
    Tensor<double> m0 = random_tensor<double>(Shape::chw(4, 4, 4), mrng);
    Rng wrng = RandomSource(67).stream("loss_w");
    Tensor<double> wsum = random_tensor<double>(Shape::chw(4, 4, 4), wrng);
    SdeSolverConfig scfg;  // dt = 0.1; two substeps over (0, 0.2)

    auto loss_at = [&](const Eigen::Array<double, Eigen::Dynamic, 1>& values) {
        auto saved = reg.values();
        reg.values() = values;
        Tape<double> t(false);
        BoundParams<double> p(t, ParamSource<double>::live(reg));
        Rng rng = RandomSource(71).stream("wiener");  // frozen noise
        auto out = sde_integrate_net(p, cfg, t.constant(m0), 0.0, 0.2, scfg, rng);
        const double v = sum_all(mul_const(out, wsum)).value().data[0];
        reg.values() = saved;
        return v;
    };

    Tape<double> t;
    BoundParams<double> p(t, ParamSource<double>::live(reg));
    Rng rng = RandomSource(71).stream("wiener");
    auto out = sde_integrate_net(p, cfg, t.constant(m0), 0.0, 0.2, scfg, rng);
    auto loss = sum_all(mul_const(out, wsum));
    t.backward(loss);
    Eigen::Array<double, Eigen::Dynamic, 1> grads =
        Eigen::Array<double, Eigen::Dynamic, 1>::Zero(reg.size());
    t.accumulate_param_grads(grads);

    Rng crng = RandomSource(73).stream("coords");
    int checked = 0;
    for (int k = 0; k < 120; ++k) {
        const auto i = static_cast<Eigen::Index>(
            crng.uniform_int(0, static_cast<std::uint64_t>(reg.size() - 1)));
        auto vp = reg.values(), vm = reg.values();
        const double eps = 1e-6;
        vp[i] += eps;
        vm[i] -= eps;
        const double fd = (loss_at(vp) - loss_at(vm)) / (2 * eps);
        const double ag = grads[i];
        if (std::abs(fd) < 1e-10 && std::abs(ag) < 1e-10) continue;
        ++checked;
        CHECK(std::abs(ag - fd) <= 1e-8 + 1e-2 * std::max(std::abs(fd), std::abs(ag)));
    }
    CHECK(checked > 40);
}
