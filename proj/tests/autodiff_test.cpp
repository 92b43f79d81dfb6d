#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "janus/grad_check.hpp"
#include "janus/ops.hpp"
#include "janus/rng.hpp"

using namespace janus;

TEST_CASE("backward on declared examples") {
    SECTION("sum is linear: unit gradients") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({3}, {1.0, -2.0, 5.0}));
        Tape<double> t;
        t.backward(sum_all(t, t.use(x)));
        CHECK(x.grad.data == std::vector<double>{1.0, 1.0, 1.0});
    }
    SECTION("quadratic: d sum(x*x)/dx = 2x") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({2}, {2.0, -1.0}));
        Tape<double> t;
        Var xs = t.use(x);
        t.backward(sum_all(t, mul(t, xs, xs)));
        CHECK(x.grad.data == std::vector<double>{4.0, -2.0});
    }
    SECTION("non-scalar loss is rejected") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({2}, {1.0, 2.0}));
        Tape<double> t;
        Var xs = t.use(x);
        REQUIRE_THROWS_WITH(t.backward(xs), Catch::Matchers::ContainsSubstring("scalar"));
    }
    SECTION("gradients accumulate when a leaf is used twice") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({2}, {3.0, 4.0}));
        Tape<double> t;
        Var xs = t.use(x);
        t.backward(sum_all(t, add(t, xs, xs)));
        CHECK(x.grad.data == std::vector<double>{2.0, 2.0});
    }
}

TEST_CASE("grad_check on declared examples") {
    SECTION("f(x) = x^2 at x = 3") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({1}, {3.0}));
        auto build = [&](Tape<double>& t) {
            Var xs = t.use(x);
            return sum_all(t, mul(t, xs, xs));
        };
        GradCheckReport r = grad_check({&x}, build, 1e-5);
        CHECK(r.entries.size() == 1);
        CHECK(r.entries[0].analytic == Catch::Approx(6.0).margin(1e-12));
        CHECK(std::fabs(r.entries[0].numeric - 6.0) < 1e-8);
        CHECK(r.max_rel_err < 1e-8);
    }
    SECTION("non-deterministic functions are rejected") {
        Parameter<double> x("x", ParamKind::weight, Tensor<double>({1}, {1.0}));
        int calls = 0;
        auto build = [&](Tape<double>& t) {
            ++calls;
            Var xs = t.use(x);
            return sum_all(t, scale(t, xs, 1.0 + 0.1 * calls));
        };
        REQUIRE_THROWS_WITH(grad_check({&x}, build), Catch::Matchers::ContainsSubstring("non-deterministic"));
    }
}

TEST_CASE("two-layer net gradients match finite differences") {
    Rng rng(42);
    const long d = 4, hidden = 6, V = 5, n = 3;
    auto rand_param = [&](const std::string& name, std::vector<long> shape) {
        Tensor<double> t = Tensor<double>::zeros(std::move(shape));
        for (double& v : t.data) v = rng.uniform(-0.8, 0.8);
        return Parameter<double>(name, ParamKind::weight, std::move(t));
    };
    Parameter<double> w1 = rand_param("w1", {d, hidden});
    Parameter<double> b1 = rand_param("b1", {hidden});
    Parameter<double> w2 = rand_param("w2", {hidden, V});
    Tensor<double> input = Tensor<double>::zeros({n, d});
    for (double& v : input.data) v = rng.uniform(-1, 1);
    const std::vector<int> targets = {1, 4, 0};

    auto build = [&](Tape<double>& t) {
        Var x = t.constant(input);
        Var h = silu(t, add_rowvec(t, matmul(t, x, t.use(w1)), t.use(b1)));
        Var logits = matmul(t, h, t.use(w2));
        return cross_entropy_mean(t, logits, targets);
    };
    GradCheckReport r = grad_check({&w1, &b1, &w2}, build, 1e-5);
    INFO("worst " << r.worst.param << "[" << r.worst.coord << "] rel=" << r.worst.rel_err);
    CHECK(r.max_rel_err < 1e-4);
}
