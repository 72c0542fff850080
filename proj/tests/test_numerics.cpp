#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "exvae/graph.hpp"
#include "exvae/numerics.hpp"
#include "exvae/optimizer.hpp"
#include "exvae/rng.hpp"
#include "helpers/test_util.hpp"

using namespace exvae;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = scale * (rng.uniform() * 2.0 - 1.0);
    return m;
}

// FD check of a graph-built scalar against the tape gradients, for a single
// leaf matrix fed through `build`.
double fd_check_unary(const Mat& x0, const std::function<Var(Graph&, Var)>& build,
                      double h = 1e-6) {
    ParamTree p;
    p.add("x", x0);
    auto value = [&](const ParamTree& pt) {
        Graph g;
        Var x = g.leaf(pt.at("x"));
        return g.scalar(build(g, x));
    };
    Graph g;
    Var x = g.leaf(x0, "x");
    Var loss = build(g, x);
    g.backward(loss);
    ParamTree analytic;
    analytic.add("x", g.grad(x));
    const ParamTree fd = testutil::finite_diff_grad(value, p, h);
    return testutil::max_rel_err(analytic, fd);
}

} // namespace

TEST_CASE("log_sum_exp basics") {
    CHECK(log_sum_exp(Eigen::VectorXd::Constant(1, 3.25)) == 3.25);

    Eigen::VectorXd two(2);
    two << 0.0, 0.0;
    CHECK(log_sum_exp(two) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Eigen::VectorXd big(2);
    big << 1000.0, 1000.0;
    CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));

    Eigen::VectorXd empty(0);
    CHECK_THROWS_AS(log_sum_exp(empty), ArgumentError);

    Eigen::VectorXd ninf = Eigen::VectorXd::Constant(3, -std::numeric_limits<double>::infinity());
    CHECK(log_sum_exp(ninf) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("log_sum_exp shift identity") {
    Rng rng(31);
    for (int rep = 0; rep < 1000; ++rep) {
        const int n = 1 + rng.uniform_int(8);
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = rng.uniform(-50.0, 50.0);
        const double c = rng.uniform(-100.0, 100.0);
        const double lhs = log_sum_exp((v.array() + c).matrix().eval());
        const double rhs = log_sum_exp(v) + c;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("backward: quadratic loss gives the weights back") {
    Rng rng(5);
    const Mat w0 = random_mat(4, 3, rng);
    Graph g;
    Var w = g.leaf(w0, "W");
    Var loss = g.scale(g.sum(g.square(w)), 0.5);
    g.backward(loss);
    CHECK(g.grad(w).isApprox(w0, 1e-14));
}

TEST_CASE("backward: log_sum_exp(Wx) matches finite differences") {
    Rng rng(6);
    const Mat w0 = random_mat(5, 4, rng);
    const Mat x0 = random_mat(1, 5, rng);

    ParamTree p;
    p.add("W", w0);
    auto value = [&](const ParamTree& pt) {
        Graph g;
        Var w = g.leaf(pt.at("W"));
        Var x = g.constant(x0);
        return g.scalar(g.row_log_sum_exp(g.matmul(x, w)));
    };

    Graph g;
    Var w = g.leaf(w0, "W");
    Var x = g.constant(x0);
    Var loss = g.row_log_sum_exp(g.matmul(x, w));
    g.backward(loss);
    ParamTree analytic;
    analytic.add("W", g.grad(w));

    const ParamTree fd = testutil::finite_diff_grad(value, p, 1e-5);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-6);
}

TEST_CASE("backward: untouched block has exactly zero gradient") {
    Graph g;
    Var used = g.leaf(Mat::Constant(2, 2, 1.5), "used");
    Var unused = g.leaf(Mat::Constant(3, 1, -2.0), "unused");
    Var loss = g.sum(g.square(used));
    g.backward(loss);
    CHECK(g.grad(unused) == Mat::Zero(3, 1));
}

TEST_CASE("backward rejects non-scalar losses") {
    Graph g;
    Var x = g.leaf(Mat::Constant(2, 2, 1.0));
    CHECK_THROWS_AS(g.backward(g.square(x)), ContractError);
}

TEST_CASE("backward reports the offending block on a non-finite gradient") {
    Graph g;
    Var x = g.leaf(Mat::Constant(1, 1, 0.0), "enc.broken");
    Var loss = g.sum(g.log_(x)); // d/dx log(x) at 0 blows up
    try {
        g.backward(loss);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("enc.broken") != std::string::npos);
    }
}

TEST_CASE("every op matches finite differences") {
    Rng rng(77);

    SUBCASE("elementwise chain") {
        const Mat x0 = random_mat(3, 4, rng, 0.8);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.mul(g.sigmoid(x), g.tanh_(g.scale(x, 0.7))));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.softplus(g.add_const(x, 0.3)));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.exp_(g.neg(g.square(x))));
              }) < 1e-6);
        // keep log and relu away from their kinks
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.log_(g.add_const(g.square(x), 0.5)));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.relu(g.add_const(x, 3.0)));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.mean(g.clamp(x, -100.0, 100.0));
              }) < 1e-6);
    }

    SUBCASE("affine and reductions") {
        const Mat x0 = random_mat(4, 3, rng);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  Var w = g.constant(Mat::Identity(3, 3) * 1.3);
                  Var b = g.constant(Mat::Constant(1, 3, 0.2));
                  return g.sum(g.sigmoid(g.affine(x, w, b)));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.row_sum(g.square(x)));
              }) < 1e-6);
        // weight side of affine
        Rng rng2(78);
        const Mat w0 = random_mat(3, 2, rng2);
        ParamTree p;
        p.add("W", w0);
        const Mat xin = random_mat(5, 3, rng2);
        auto value = [&](const ParamTree& pt) {
            Graph g;
            Var w = g.leaf(pt.at("W"));
            Var b = g.constant(Mat::Zero(1, 2));
            return g.scalar(g.sum(g.tanh_(g.affine(g.constant(xin), w, b))));
        };
        Graph g;
        Var w = g.leaf(w0, "W");
        Var loss = g.sum(g.tanh_(g.affine(g.constant(xin), w, g.constant(Mat::Zero(1, 2)))));
        g.backward(loss);
        ParamTree analytic;
        analytic.add("W", g.grad(w));
        CHECK(testutil::max_rel_err(analytic, testutil::finite_diff_grad(value, p)) < 1e-6);
    }

    SUBCASE("log-sum-exp rows, masked and unmasked") {
        const Mat x0 = random_mat(4, 6, rng, 3.0);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.row_log_sum_exp(x));
              }) < 1e-6);
        Mat mask = Mat::Zero(4, 6);
        Rng mrng(9);
        for (int i = 0; i < 4; ++i) {
            mask(i, mrng.uniform_int(6)) = 1.0;
            mask(i, mrng.uniform_int(6)) = 1.0;
        }
        CHECK(fd_check_unary(x0, [mask](Graph& g, Var x) {
                  return g.sum(g.masked_row_log_sum_exp(x, mask));
              }) < 1e-6);
    }

    SUBCASE("pairwise squared distances, both sides") {
        const Mat z0 = random_mat(3, 2, rng);
        const Mat u0 = random_mat(5, 2, rng);
        CHECK(fd_check_unary(z0, [u0](Graph& g, Var z) {
                  return g.sum(g.exp_(g.scale(g.pairwise_sqdist(z, g.constant(u0)), -0.5)));
              }) < 1e-6);
        CHECK(fd_check_unary(u0, [z0](Graph& g, Var u) {
                  return g.sum(g.exp_(g.scale(g.pairwise_sqdist(g.constant(z0), u), -0.5)));
              }) < 1e-6);
    }

    SUBCASE("scalar broadcasts and column broadcast") {
        const Mat x0 = random_mat(3, 3, rng);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  Var s = g.leaf(Mat::Constant(1, 1, 0.7));
                  return g.sum(g.add_scalar(g.mul_scalar(x, s), s));
              }) < 1e-6);
        const Mat s0 = Mat::Constant(1, 1, -0.4);
        CHECK(fd_check_unary(s0, [x0](Graph& g, Var s) {
                  return g.sum(g.sigmoid(g.mul_scalar(g.constant(x0), g.exp_(s))));
              }) < 1e-6);
        CHECK(fd_check_unary(x0, [](Graph& g, Var x) {
                  return g.sum(g.square(g.sub_colvec(x, g.row_log_sum_exp(x))));
              }) < 1e-6);
    }
}

TEST_CASE("pairwise_sqdist values match the direct computation") {
    Rng rng(12);
    const Mat z = random_mat(4, 3, rng);
    const Mat u = random_mat(6, 3, rng);
    Graph g;
    Var d = g.pairwise_sqdist(g.constant(z), g.constant(u));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(g.value(d)(i, j) ==
                  doctest::Approx((z.row(i) - u.row(j)).squaredNorm()).epsilon(1e-10));
}

TEST_CASE("gn_adam: zero-gradient block stays untouched") {
    ParamTree params;
    params.add("a", Mat::Constant(2, 2, 1.0));
    params.add("b", Mat::Constant(2, 2, 2.0));
    ParamTree grads = params.zeros_like();
    grads.at("a") = Mat::Constant(2, 2, 0.5);

    GnAdam opt;
    opt.step(params, grads);
    CHECK(params.at("b") == Mat::Constant(2, 2, 2.0));
    CHECK(params.at("a") != Mat::Constant(2, 2, 1.0));
}

TEST_CASE("gn_adam: update invariant to gradient rescaling") {
    ParamTree p1, p2;
    p1.add("w", Mat::Constant(3, 1, 1.0));
    p2.add("w", Mat::Constant(3, 1, 1.0));
    ParamTree g1 = p1.zeros_like(), g2 = p2.zeros_like();
    Rng rng(3);
    for (int i = 0; i < 3; ++i) g1.at("w")(i, 0) = rng.uniform(-1, 1);
    g2.at("w") = 10.0 * g1.at("w");

    GnAdam o1, o2;
    o1.step(p1, g1);
    o2.step(p2, g2);
    CHECK(p1.at("w") == p2.at("w"));
}

TEST_CASE("gn_adam: first step on a scalar moves by ~lr") {
    ParamTree params;
    params.add("p", Mat::Constant(1, 1, 1.0));
    ParamTree grads = params.zeros_like();
    grads.at("p")(0, 0) = 2.0;

    GnAdamConfig cfg;
    cfg.lr = 0.1;
    GnAdam opt(cfg);
    opt.step(params, grads);
    // unit-normalized g = 1; bias-corrected first Adam step is lr/(1+eps)
    CHECK(params.at("p")(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("gn_adam: non-finite gradient rejected before any mutation") {
    ParamTree params;
    params.add("p", Mat::Constant(1, 1, 1.0));
    ParamTree grads = params.zeros_like();
    grads.at("p")(0, 0) = std::numeric_limits<double>::quiet_NaN();

    GnAdam opt;
    CHECK_THROWS_AS(opt.step(params, grads), NumericError);
    CHECK(params.at("p")(0, 0) == 1.0);
    CHECK(opt.steps_taken() == 0);
}

TEST_CASE("param tree shape checks") {
    ParamTree a, b;
    a.add("x", Mat::Zero(2, 2));
    b.add("x", Mat::Zero(2, 3));
    CHECK_THROWS_AS(a.check_same_shape(b, "test"), ContractError);
    CHECK_THROWS_AS(a.at("missing"), ContractError);
    ParamTree z = a.zeros_like();
    CHECK(z.at("x") == Mat::Zero(2, 2));
}
