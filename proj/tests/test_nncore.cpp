#include "doctest.h"
#include "support.hpp"

#include "rgflow/nncore.hpp"

using namespace rgflow;
using rgflow::testing::random_normal;
using rgflow::testing::rel_err;

TEST_CASE("silu values and derivative") {
    CHECK(silu(0.0) == 0.0);
    CHECK(silu(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    Eigen::ArrayXd x(5);
    x << -4, -1, 0, 0.5, 3;
    const Eigen::ArrayXd g = silu_grad(x);
    for (Index k = 0; k < x.size(); ++k) {
        const double numeric = (silu(x(k) + 1e-6) - silu(x(k) - 1e-6)) / 2e-6;
        CHECK(g(k) == doctest::Approx(numeric).epsilon(1e-6));
    }
}

TEST_CASE("kaiming statistics and weight normalization") {
    Rng rng(7);
    DenseLayer<double> layer(400, 300);
    layer.kaiming_init(rng);
    const Mat<double> w = layer.weight();
    CHECK((w - layer.direction()).cwiseAbs().maxCoeff() < 1e-12);
    const double var = w.array().square().mean();
    CHECK(var == doctest::Approx(2.0 / 400).epsilon(0.03));
    CHECK(layer.bias().isZero());
    layer.zero_init(rng);
    CHECK(layer.weight().isZero());
    CHECK(layer.direction().norm() > 0);
}

TEST_CASE("dense layer gradients match differences") {
    Rng rng(3);
    DenseLayer<double> layer(5, 4);
    layer.kaiming_init(rng);
    layer.gain() *= 1.7;
    layer.bias().setRandom();
    const Mat<double> x = random_normal<double>(5, 6, 4);
    const Mat<double> dy = random_normal<double>(4, 6, 5);
    const auto objective = [&] { return (layer.apply(layer.weight(), x).array() * dy.array()).sum(); };
    layer.zero_grad();
    layer.accumulate_grad(x, dy);
    ParamList<double> params;
    layer.collect("d", params);
    CHECK(params.size() == 3);
    for (const auto& p : params) {
        for (Index k = 0; k < p.size; ++k) {
            const double keep = p.value[k];
            p.value[k] = keep + 1e-6;
            const double up = objective();
            p.value[k] = keep - 1e-6;
            const double down = objective();
            p.value[k] = keep;
            CHECK(rel_err((up - down) / 2e-6, p.grad[k]) < 1e-6);
        }
    }
}

TEST_CASE("resnet starts at zero and its gradients match differences") {
    Rng rng(11);
    ResNet<double> net(6, 10, 2);
    net.init(rng);
    const Mat<double> x = random_normal<double>(6, 3, 12);
    CHECK(net.forward(x).isZero());

    perturb_parameters([&] {
        ParamList<double> p;
        net.collect("n", p);
        return p;
    }(), rng, 0.1);
    ParamList<double> params;
    net.collect("n", params);
    for (const auto& p : params) p.grads().setZero();

    const Mat<double> dy = random_normal<double>(6, 3, 13);
    ResNetCache<double> cache;
    const auto objective = [&](const Mat<double>& in) { return (net.forward(in).array() * dy.array()).sum(); };
    net.forward(x, cache);
    const Mat<double> dx = net.backward(cache, dy);
    CHECK((dx - net.backward_input(cache, dy)).cwiseAbs().maxCoeff() < 1e-14);

    double worst = 0;
    for (const auto& p : params) {
        for (Index k = 0; k < p.size; k += 3) {
            const double keep = p.value[k];
            p.value[k] = keep + 1e-6;
            const double up = objective(x);
            p.value[k] = keep - 1e-6;
            const double down = objective(x);
            p.value[k] = keep;
            const double numeric = (up - down) / 2e-6;
            if (std::abs(numeric) < 1e-8 && std::abs(p.grad[k]) < 1e-8) continue;
            worst = std::max(worst, rel_err(numeric, p.grad[k]));
        }
    }
    CHECK(worst < 1e-5);

    Mat<double> tangent = random_normal<double>(6, 3, 14);
    const Mat<double> jvp = net.jvp(cache, tangent);
    const Mat<double> numeric = (net.forward(x + 1e-6 * tangent) - net.forward(x - 1e-6 * tangent)) / 2e-6;
    CHECK((jvp - numeric).cwiseAbs().maxCoeff() < 1e-6);
    for (Index k = 0; k < x.size(); ++k) {
        Mat<double> xp = x, xm = x;
        xp.data()[k] += 1e-6;
        xm.data()[k] -= 1e-6;
        CHECK(rel_err((objective(xp) - objective(xm)) / 2e-6, dx.data()[k]) < 1e-5);
    }
}

TEST_CASE("adamw first step and decoupled decay") {
    Vec<double> value(3), grad(3);
    value << 1.0, -2.0, 0.5;
    grad << 0.1, -0.3, 0.0;
    ParamList<double> params{make_param<double>("p", value, grad)};
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    cfg.clip_norm = 0;
    AdamW<double> opt(cfg);
    opt.step(params);
    // bias-corrected first step moves by lr * sign(g), after shrinking by lr * wd
    CHECK(value(0) == doctest::Approx(1.0 * (1 - 0.001) - 0.01).epsilon(1e-9));
    CHECK(value(1) == doctest::Approx(-2.0 * (1 - 0.001) + 0.01).epsilon(1e-9));
    CHECK(value(2) == doctest::Approx(0.5 * (1 - 0.001)).epsilon(1e-12));
    CHECK(opt.steps() == 1);
}

TEST_CASE("clipping runs before the update and reports the raw norm") {
    Vec<double> value = Vec<double>::Zero(2), grad(2);
    grad << 3.0, 4.0;
    ParamList<double> params{make_param<double>("p", value, grad)};
    CHECK(clip_global_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(grad.norm() == doctest::Approx(1.0));
    grad << 3.0, 4.0;
    AdamWConfig cfg;
    cfg.clip_norm = 2.5;
    AdamW<double> opt(cfg);
    CHECK(opt.step(params) == doctest::Approx(5.0));
    CHECK(grad.norm() == doctest::Approx(2.5));
}

TEST_CASE("non-finite gradients are rejected") {
    Vec<double> value = Vec<double>::Zero(2), grad(2);
    grad << 1.0, std::numeric_limits<double>::infinity();
    ParamList<double> params{make_param<double>("p", value, grad)};
    AdamW<double> opt;
    CHECK_THROWS_AS(opt.step(params), TrainingDiverged);
    CHECK(value.isZero());
}
