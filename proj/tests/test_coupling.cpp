#include "doctest.h"
#include "support.hpp"

#include "rgflow/coupling.hpp"

#include <Eigen/LU>

#include <algorithm>

using namespace rgflow;
using rgflow::testing::numerical_jacobian;
using rgflow::testing::random_normal;

namespace {

BijectorStack<double> random_stack(int n_blocks, int m, int C, unsigned long long seed, double perturb = 0.1) {
    auto stack = BijectorStack<double>::checkerboard(n_blocks, m, C, {6, 1, 8.0});
    Rng rng(seed);
    stack.init(rng);
    ParamList<double> params;
    stack.collect("s", params);
    perturb_parameters(params, rng, perturb);
    return stack;
}

}  // namespace

TEST_CASE("checkerboard halves partition the patch") {
    const CheckerboardMask mask{0, 4, 3};
    auto a = mask.first(), b = mask.second();
    CHECK(a.size() == 24);
    CHECK(b.size() == 24);
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    for (int k = 0; k < 48; ++k) CHECK(a[std::size_t(k)] == k);
    CHECK(CheckerboardMask{1, 4, 3}.first() == mask.second());
}

TEST_CASE("identity at initialization") {
    auto stack = BijectorStack<double>::checkerboard(4, 4, 3, {8, 2, 8.0});
    Rng rng(1);
    stack.init(rng);
    const Mat<double> x = random_normal<double>(48, 5, 2);
    const auto y = stack.forward(x);
    CHECK(y.value == x);
    CHECK(y.logdet.isZero());
}

TEST_CASE("forward and inverse are exact inverses") {
    const auto stack = random_stack(4, 4, 2, 3);
    const Mat<double> x = random_normal<double>(32, 7, 4);
    const auto y = stack.forward(x);
    const auto back = stack.inverse(y.value);
    CHECK((back.value - x).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.logdet + y.logdet).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(y.logdet.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("log-det equals the Jacobian determinant") {
    const auto stack = random_stack(3, 2, 2, 5);
    const Vec<double> x = random_normal<double>(8, 1, 6);
    const auto J = numerical_jacobian([&](const Vec<double>& v) { return Vec<double>(stack.forward(v).value); }, x);
    CHECK(std::log(std::abs(J.determinant())) == doctest::Approx(stack.forward(x).logdet(0)).epsilon(1e-7));
}

TEST_CASE("soft clamp bounds the per-variable log-scale") {
    auto stack = random_stack(1, 2, 1, 7, 3.0);
    const Mat<double> x = random_normal<double>(4, 50, 8, 10.0);
    const auto y = stack.forward(x);
    // two log-scales of magnitude < clamp per variable pair
    CHECK(y.logdet.cwiseAbs().maxCoeff() < 4 * 8.0);
}

TEST_CASE("stack jvp matches differences in both directions") {
    const auto stack = random_stack(3, 2, 2, 9);
    const Mat<double> x = random_normal<double>(8, 3, 10);
    const Mat<double> t = random_normal<double>(8, 3, 11);
    const auto [y, ty] = stack.forward_jvp(x, t);
    const Mat<double> fd = (stack.forward(x + 1e-6 * t).value - stack.forward(x - 1e-6 * t).value) / 2e-6;
    CHECK((y - stack.forward(x).value).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((ty - fd).cwiseAbs().maxCoeff() < 1e-6);
    const auto [xi, tx] = stack.inverse_jvp(x, t);
    const Mat<double> fdi = (stack.inverse(x + 1e-6 * t).value - stack.inverse(x - 1e-6 * t).value) / 2e-6;
    CHECK((tx - fdi).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("wrong input height is rejected") {
    const auto stack = random_stack(2, 2, 1, 1);
    CHECK_THROWS_AS(stack.forward(Mat<double>::Zero(5, 1)), InvalidArgument);
    CHECK_THROWS_AS(CouplingBlock<double>({0, 1}, {2}, {}), InvalidArgument);
}
