#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcmae/graph.hpp"
#include "lcmae/rng.hpp"

using namespace lcmae;

namespace {

Array<double> randn(Shape s, Rng& rng, double scale = 1.0) {
    Array<double> a(std::move(s));
    for (auto& v : a.data) v = rng.normal() * scale;
    return a;
}

Array<double> rand_away_from_zero(Shape s, Rng& rng, double lo = 0.2, double hi = 1.2) {
    Array<double> a(std::move(s));
    for (auto& v : a.data) v = rng.uniform(lo, hi) * (rng.next_double() < 0.5 ? -1.0 : 1.0);
    return a;
}

Array<double> rand_positive(Shape s, Rng& rng, double lo = 0.5, double hi = 2.0) {
    Array<double> a(std::move(s));
    for (auto& v : a.data) v = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_CASE("evaluate: matmul identity case") {
    Graph<double> g;
    Array<double> eye({2, 2});
    eye.at(0, 0) = 1;
    eye.at(1, 1) = 1;
    Array<double> m({2, 2}, {3, 1, 4, 1});
    Var out = g.matmul(g.constant(eye), g.constant(m));
    g.forward();
    CHECK(g.value(out).data == std::vector<double>{3, 1, 4, 1});
}

TEST_CASE("evaluate: softmax of a constant row is uniform") {
    Graph<double> g;
    Var out = g.softmax_rows(g.constant(Array<double>({3}, {0, 0, 0})));
    g.forward();
    for (double v : g.value(out).data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("evaluate: layernorm of a constant vector is zero pre-affine") {
    Graph<double> g;
    Var out = g.layernorm_rows(g.constant(Array<double>({4}, {2.5, 2.5, 2.5, 2.5})));
    g.forward();
    for (double v : g.value(out).data) CHECK(v == 0.0);
}

TEST_CASE("evaluate is pure: repeated forwards are bit-identical") {
    Rng rng(11, 0);
    Graph<double> g;
    Var x = g.input("x", {3, 4});
    Var w = g.param("w", randn({4, 5}, rng));
    Var y = g.softmax_rows(g.gelu(g.matmul(x, w)));
    g.bind("x", randn({3, 4}, rng));
    g.forward();
    const std::vector<double> first = g.value(y).data;
    g.forward();
    CHECK(g.value(y).data == first);
    (void)w;
}

TEST_CASE("evaluate: shape mismatch errors name the node") {
    Graph<double> g;
    Var a = g.constant(Array<double>({2, 3}));
    Var b = g.constant(Array<double>({4, 2}));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), GraphError);
}

TEST_CASE("evaluate: non-finite intermediate errors name the node") {
    Graph<double> g;
    Var x = g.input("x", {2});
    Var y = g.pow_scalar(x, -1.0);
    g.rename(y, "reciprocal");
    g.bind("x", Array<double>({2}, {1.0, 0.0}));
    CHECK_THROWS_WITH_AS(g.forward(), doctest::Contains("reciprocal"), NumericError);
}

TEST_CASE("backward: d/dx sum(x^2) at [1,2] is [2,4]") {
    Graph<double> g;
    Var x = g.input("x", {2}, true);
    Var loss = g.sum_all(g.mul(x, x));
    g.bind("x", Array<double>({2}, {1, 2}));
    g.forward();
    g.backward(loss);
    CHECK(g.grad(x).data[0] == doctest::Approx(2.0));
    CHECK(g.grad(x).data[1] == doctest::Approx(4.0));
}

TEST_CASE("backward: gradient of 1-cos(x,y) vanishes at alignment") {
    Graph<double> g;
    Array<double> v({1, 3}, {0.6, 0.8, 0.0});
    Var x = g.input("x", {1, 3}, true);
    Var y = g.constant(v);
    Var loss = g.sum_all(g.add_scalar(g.mul_scalar(g.cosine_rows(x, y), -1.0), 1.0));
    g.bind("x", v);
    g.forward();
    g.backward(loss);
    for (double d : g.grad(x).data) CHECK(std::abs(d) < 1e-14);
}

TEST_CASE("backward: non-scalar output is an error") {
    Graph<double> g;
    Var x = g.input("x", {2}, true);
    Var y = g.mul(x, x);
    g.bind("x", Array<double>({2}, {1, 2}));
    g.forward();
    CHECK_THROWS_AS(g.backward(y), GraphError);
}

TEST_CASE("backward: detached nodes get zero gradients, not errors") {
    Graph<double> g;
    Var x = g.input("x", {2}, true);
    Var loss = g.sum_all(g.detach(g.mul(x, x)));
    g.bind("x", Array<double>({2}, {1, 2}));
    g.forward();
    g.backward(loss);
    const auto grads = g.gradients();
    CHECK(grads.at("x").data == std::vector<double>{0, 0});
}

TEST_CASE("backward: softmax-cosine composite matches finite differences to 1e-5") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, 21);
        Graph<double> g;
        Var a = g.param("a", randn({3, 4}, rng));
        Var w = g.param("w", randn({4, 4}, rng));
        Var b = g.constant(rand_away_from_zero({3, 4}, rng));
        Var v1 = g.matmul(g.softmax_rows(a), w);
        Var loss = g.sum_all(g.add_scalar(g.mul_scalar(g.cosine_rows(v1, b), -1.0), 1.0));
        CHECK(gradcheck(g, loss, {"a", "w"}) <= 1e-5);
    }
}

TEST_CASE("gradcheck: linear layer below 1e-6") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, 3);
        Graph<double> g;
        Var x = g.input("x", {4, 6}, true);
        Var w = g.param("w", randn({6, 3}, rng));
        Var b = g.param("b", randn({3}, rng));
        Var loss = g.sum_all(g.add(g.matmul(x, w), b));
        g.bind("x", randn({4, 6}, rng));
        CHECK(gradcheck(g, loss, {"x", "w", "b"}) <= 1e-6);
    }
}

TEST_CASE("gradcheck: constant function has exactly zero error") {
    Graph<double> g;
    Var x = g.input("x", {3}, true);
    Var loss = g.sum_all(g.mul_scalar(x, 0.0));
    g.bind("x", Array<double>({3}, {1, 2, 3}));
    CHECK(gradcheck(g, loss, {"x"}) == 0.0);
}

// Every primitive with a differentiable surface, 10 random seeds each,
// max relative error <= 1e-5 in 64-bit.
TEST_CASE("gradcheck: every primitive") {
    const double tol = 1e-5;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed, 77);
        auto check = [&](const char* what, auto&& build) {
            Graph<double> g;
            Var loss = build(g, rng);
            INFO(what << " seed " << seed);
            CHECK(gradcheck(g, loss, {"p"}) <= tol);
        };
        check("add", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.add(p, g.constant(randn({3, 4}, r))), g.constant(randn({3, 4}, r))));
        });
        check("add broadcast", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({4}, r));
            return g.sum_all(g.mul(g.add(g.constant(randn({3, 4}, r)), p), g.constant(randn({3, 4}, r))));
        });
        check("sub", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.sub(g.constant(randn({3, 4}, r)), p), g.constant(randn({3, 4}, r))));
        });
        check("mul", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(p, g.constant(randn({3, 4}, r))));
        });
        check("mul broadcast col", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 1}, r));
            return g.sum_all(g.mul(g.constant(randn({3, 4}, r)), p));
        });
        check("add_scalar/mul_scalar", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({5}, r));
            return g.sum_all(g.mul(g.add_scalar(g.mul_scalar(p, 1.7), -0.3), p));
        });
        check("pow_scalar", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_positive({4}, r));
            return g.sum_all(g.pow_scalar(p, 1.6));
        });
        check("exp", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({4}, r, 0.5));
            return g.sum_all(g.exp(p));
        });
        check("sqrt", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_positive({4}, r));
            return g.sum_all(g.sqrt(p));
        });
        check("abs", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_away_from_zero({4}, r));
            return g.sum_all(g.abs(p));
        });
        check("gelu", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({6}, r));
            return g.sum_all(g.gelu(p));
        });
        check("matmul", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.matmul(p, g.constant(randn({4, 2}, r))), g.constant(randn({3, 2}, r))));
        });
        check("matmul_nt", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.matmul_nt(p, g.constant(randn({2, 4}, r))), g.constant(randn({3, 2}, r))));
        });
        check("matmul_tn", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({4, 3}, r));
            return g.sum_all(g.mul(g.matmul_tn(p, g.constant(randn({4, 2}, r))), g.constant(randn({3, 2}, r))));
        });
        check("transpose", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.transpose(p), g.constant(randn({4, 3}, r))));
        });
        check("reshape", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.reshape(p, {2, 6}), g.constant(randn({2, 6}, r))));
        });
        check("concat_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({2, 3}, r));
            Var q = g.constant(randn({1, 3}, r));
            return g.sum_all(g.mul(g.concat_rows({p, q, p}), g.constant(randn({5, 3}, r))));
        });
        check("concat_cols", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({2, 3}, r));
            return g.sum_all(g.mul(g.concat_cols({p, p}), g.constant(randn({2, 6}, r))));
        });
        check("slice_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({5, 3}, r));
            return g.sum_all(g.mul(g.slice_rows(p, 1, 3), g.constant(randn({3, 3}, r))));
        });
        check("slice_cols", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 5}, r));
            return g.sum_all(g.mul(g.slice_cols(p, 2, 2), g.constant(randn({3, 2}, r))));
        });
        check("gather_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({4, 3}, r));
            return g.sum_all(g.mul(g.gather_rows(p, {2, 0, 2, 3}), g.constant(randn({4, 3}, r))));
        });
        check("scatter_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 2}, r));
            return g.sum_all(g.mul(g.scatter_rows(p, {4, 0, 2}, 5), g.constant(randn({5, 2}, r))));
        });
        check("tile_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3}, r));
            return g.sum_all(g.mul(g.tile_rows(p, 4), g.constant(randn({4, 3}, r))));
        });
        check("sum_axis", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.sum_axis(p, 0), g.constant(randn({4}, r))));
        });
        check("mean_axis", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.sum_all(g.mul(g.mean_axis(p, 1), g.constant(randn({3}, r))));
        });
        check("mean_all", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 4}, r));
            return g.mean_all(g.mul(p, p));
        });
        check("softmax_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 5}, r));
            return g.sum_all(g.mul(g.softmax_rows(p), g.constant(randn({3, 5}, r))));
        });
        check("layernorm_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3, 6}, r));
            return g.sum_all(g.mul(g.layernorm_rows(p), g.constant(randn({3, 6}, r))));
        });
        check("l2norm_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_away_from_zero({3, 4}, r));
            return g.sum_all(g.mul(g.l2norm_rows(p), g.constant(randn({3}, r))));
        });
        check("cosine_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_away_from_zero({3, 4}, r));
            Var q = g.constant(rand_away_from_zero({3, 4}, r));
            return g.sum_all(g.mul(g.cosine_rows(p, q), g.constant(randn({3}, r))));
        });
        check("cosine_rows masked", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_away_from_zero({3, 4}, r));
            Var q = g.constant(rand_away_from_zero({3, 4}, r));
            return g.sum_all(g.mul(g.cosine_rows(p, q, {1, 0, 1}), g.constant(randn({3}, r))));
        });
        check("normalize_rows", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", rand_away_from_zero({3, 4}, r));
            return g.sum_all(g.mul(g.normalize_rows(p), g.constant(randn({3, 4}, r))));
        });
        check("conv2d", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({2, 2, 3, 3}, r));
            Var x = g.constant(randn({2, 4, 4}, r));
            return g.sum_all(g.mul(g.conv2d(x, p), g.constant(randn({2, 4, 4}, r))));
        });
        check("conv2d input", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({2, 4, 4}, r));
            Var w = g.constant(randn({3, 2, 3, 3}, r));
            return g.sum_all(g.mul(g.conv2d(p, w), g.constant(randn({3, 4, 4}, r))));
        });
        check("add_channel_bias", [&](Graph<double>& g, Rng& r) {
            Var p = g.param("p", randn({3}, r));
            Var x = g.constant(randn({3, 2, 2}, r));
            return g.sum_all(g.mul(g.add_channel_bias(x, p), g.constant(randn({3, 2, 2}, r))));
        });
    }
}

TEST_CASE("gather then scatter with the same indices reconstructs the kept rows") {
    Rng rng(5, 0);
    Graph<double> g;
    Array<double> a = randn({6, 3}, rng);
    const std::vector<int64_t> idx = {1, 4, 5};
    Var src = g.constant(a);
    Var out = g.scatter_rows(g.gather_rows(src, idx), idx, 6);
    g.forward();
    const Array<double>& y = g.value(out);
    for (int64_t r = 0; r < 6; ++r) {
        const bool kept = r == 1 || r == 4 || r == 5;
        for (int64_t c = 0; c < 3; ++c) CHECK(y.at(r, c) == (kept ? a.at(r, c) : 0.0));
    }
}

TEST_CASE("evaluate contract form: named inputs and outputs") {
    Graph<double> g;
    Var x = g.input("x", {2, 2});
    Var w = g.param("w", Array<double>({2, 2}, {1, 0, 0, 1}));
    Var y = g.matmul(x, w);
    g.rename(y, "y");
    const auto out = g.evaluate({{"x", Array<double>({2, 2}, {3, 1, 4, 1})}}, {"y"});
    CHECK(out.at("y").data == std::vector<double>{3, 1, 4, 1});
}

TEST_CASE("scatter rejects duplicate and out-of-range indices") {
    Graph<double> g;
    Var src = g.constant(Array<double>({2, 1}, {1, 2}));
    CHECK_THROWS_AS(g.scatter_rows(src, {0, 0}, 3), GraphError);
    CHECK_THROWS_AS(g.scatter_rows(src, {0, 7}, 3), GraphError);
}
