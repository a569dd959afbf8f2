#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "poselift/batchnorm.hpp"
#include "poselift/blas.hpp"
#include "poselift/checkpoint.hpp"
#include "poselift/errors.hpp"
#include "poselift/grad_check.hpp"
#include "poselift/ops.hpp"
#include "poselift/optim.hpp"
#include "poselift/rng.hpp"

using namespace poselift;
using ag::Var;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("tensor construction and shape checks") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.transposed() == Tensor::matrix({{1, 4}, {2, 5}, {3, 6}}));
    CHECK_THROWS_AS(Tensor::scalar(1.0).transposed(), ShapeError);
    t[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("matmul by identity") {
    const Var a = ag::constant(Tensor::matrix({{1, 2}, {3, 4}}));
    const Var i = ag::constant(Tensor::identity(2));
    CHECK(ag::matmul(a, i).value() == Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(ag::matmul(i, a).value() == Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST_CASE("batched and shared matmul agree with per-matrix products") {
    const Tensor a = random_tensor({3, 4, 5}, 1);
    const Tensor b = random_tensor({5, 2}, 2);
    const Tensor k = random_tensor({4, 4}, 3);
    const Tensor ab = ag::matmul(ag::constant(a), ag::constant(b)).value();
    const Tensor ka = ag::matmul(ag::constant(k), ag::constant(a)).value();
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < 5; ++p) s += a.at(n, i, p) * b.at(p, j);
                CHECK(ab.at(n, i, j) == doctest::Approx(s).epsilon(1e-14));
            }
            for (std::size_t j = 0; j < 5; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < 4; ++p) s += k.at(i, p) * a.at(n, p, j);
                CHECK(ka.at(n, i, j) == doctest::Approx(s).epsilon(1e-14));
            }
        }
    CHECK_THROWS_WITH_AS(ag::matmul(ag::constant(b), ag::constant(b)), doctest::Contains("[5, 2]"), ShapeError);
}

TEST_CASE("relu, broadcasting and reductions") {
    CHECK(ag::relu(ag::constant(Tensor({3}, {-1.0, 0.0, 2.0}))).value() == Tensor({3}, {0.0, 0.0, 2.0}));
    const Var m = ag::constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
    const Var row = ag::constant(Tensor({3}, {10, 20, 30}));
    CHECK(ag::add(m, row).value() == Tensor::matrix({{11, 22, 33}, {14, 25, 36}}));
    CHECK(ag::add(row, m).value() == ag::add(m, row).value());
    CHECK(ag::sum(m, 0).value() == Tensor({3}, {5, 7, 9}));
    CHECK(ag::mean(m, 1).value() == Tensor({2}, {2, 5}));
    CHECK(ag::sum(m).value().item() == 21.0);
    CHECK(ag::concat_last({m, m}).value().shape() == Shape{2, 6});
    CHECK_THROWS_AS(ag::add(m, ag::constant(Tensor({2}, 1.0))), ShapeError);
    CHECK(ag::broadcast_shape({4, 1, 3}, {2, 1}) == Shape{4, 2, 3});
}

TEST_CASE("ops never modify their inputs") {
    const Tensor a0 = random_tensor({2, 3}, 4);
    const Tensor b0 = random_tensor({3}, 5);
    const Var a(a0, true), b(b0, true);
    ag::backward(ag::sum(ag::mul(ag::relu(ag::add(a, b)), ag::sub(a, b))));
    CHECK(a.value() == a0);
    CHECK(b.value() == b0);
}

TEST_CASE("gradient of sum(x*x) at 3 is 6") {
    const Var x(Tensor({1}, {3.0}), true);
    ag::backward(ag::sum(ag::mul(x, x)));
    CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("shared subexpressions accumulate") {
    const Var x(Tensor({1}, {1.25}), true);
    ag::backward(ag::sum(ag::add(x, x)));
    CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("grad of sum(W x) is the broadcast of x; unused parameters get zero") {
    Parameter w("W", random_tensor({2, 3}, 6));
    Parameter unused("U", random_tensor({4}, 7));
    const Tensor x = Tensor::matrix({{1.0}, {-2.0}, {0.5}});
    ag::backward(ag::sum(ag::matmul(w.var, ag::constant(x))));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(w.grad().at(i, j) == x.at(j, 0));
    CHECK(unused.grad() == Tensor({4}, 0.0));
}

TEST_CASE("backward requires a scalar loss") {
    const Var x(Tensor({2}, 1.0), true);
    CHECK_THROWS_AS(ag::backward(ag::mul(x, x)), ShapeError);
}

TEST_CASE("no-grad guard records nothing") {
    const Var x(Tensor({2}, 1.0), true);
    {
        ag::NoGradGuard guard;
        CHECK_FALSE(ag::grad_enabled());
        CHECK_FALSE(ag::mul(x, x).requires_grad());
    }
    CHECK(ag::grad_enabled());
    CHECK(ag::mul(x, x).requires_grad());
}

TEST_CASE("random three-layer composition matches finite differences") {
    Parameter w1("W1", random_tensor({4, 6}, 11));
    Parameter b1("b1", random_tensor({6}, 12));
    Parameter w2("W2", random_tensor({6, 5}, 13));
    Parameter w3("W3", random_tensor({5, 2}, 14));
    Parameter g("g", random_tensor({2}, 15));
    const Tensor x = random_tensor({3, 7, 4}, 16);
    const Tensor y = random_tensor({3, 7, 2}, 17);
    auto loss = [&] {
        Var h = ag::relu(ag::add(ag::matmul(ag::constant(x), w1.var), b1.var));
        h = ag::relu(ag::matmul(h, w2.var));
        Var out = ag::mul(ag::matmul(h, w3.var), g.var);
        Var both = ag::concat_last({out, ag::scale(out, 0.5)});
        return ag::add(ag::mse_loss(out, ag::constant(y)), ag::mean(ag::mul(both, both)));
    };
    const auto report = grad_check(loss, {&w1, &b1, &w2, &w3, &g}, 1e-5, 1e-4);
    CHECK(report.passed());
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
    Parameter a("a", random_tensor({2, 3, 4}, 21));
    Parameter b("b", random_tensor({4}, 22));
    Parameter m("m", random_tensor({3, 3}, 23));
    Parameter w("w", random_tensor({4, 2}, 24));
    auto loss = [&] {
        Var s = ag::sub(ag::mul(a.var, b.var), ag::scale(a.var, 0.3));
        Var k = ag::matmul(m.var, s);                   // shared-left
        Var f = ag::matmul(k, w.var);                   // flat-left
        Var bt = ag::matmul(s, ag::matmul(ag::reshape(s, {2, 4, 3}), m.var));  // batched
        Var r = ag::add(ag::sum(ag::mean(f, 1)), ag::sum(ag::sum(bt, 2)));
        return ag::add(r, ag::sum(ag::mul(ag::relu(s), s)));
    };
    const auto report = grad_check(loss, {&a, &b, &m, &w}, 1e-5, 1e-4);
    for (const auto& e : report.entries) CHECK_MESSAGE(e.max_rel_error < 1e-4, e.name);
}

TEST_CASE("grad_check examples") {
    Parameter x("x", Tensor({2}, {1.0, 2.0}));
    auto sq = [&] { return ag::sum(ag::mul(x.var, x.var)); };
    CHECK(grad_check(sq, {&x}, 1e-5, 1e-6).max_rel_error < 1e-6);

    auto constant = [&] { return ag::add(ag::scale(ag::sum(x.var), 0.0), ag::constant(Tensor::scalar(4.0))); };
    const auto report = grad_check(constant, {&x}, 1e-5, 1e-6);
    CHECK(report.entries[0].analytic == 0.0);
    CHECK(report.entries[0].numeric == 0.0);

    // A wrong gradient is reported, not thrown.
    Parameter y("y", Tensor({1}, {0.7}));
    auto broken = [&] {
        Tensor v = y.value();
        return ag::make_result(Tensor::scalar(v[0] * v[0]), {y.var}, [](ag::Node& self) {
            self.inputs[0]->accumulate(Tensor({1}, {0.0}));
        });
    };
    const auto bad = grad_check(broken, {&y}, 1e-5, 1e-6);
    CHECK_FALSE(bad.passed());
    CHECK(bad.failures == std::vector<std::string>{"y"});
}

TEST_CASE("batch norm: eval with matching running stats gives zeros") {
    BatchNormState st(3);
    st.running_mean = Tensor({3}, 2.5);
    st.running_var = Tensor({3}, 1.0);
    st.eps = 0.0;
    const Var z = ag::constant(Tensor({2, 4, 3}, 2.5));
    const Tensor out =
        batch_norm(z, ag::constant(Tensor({3}, 1.0)), ag::constant(Tensor({3}, 0.0)), st, Mode::kEval).value();
    CHECK(out == Tensor({2, 4, 3}, 0.0));
}

TEST_CASE("batch norm: train output is standardized per feature") {
    BatchNormState st(4);
    const Tensor z = random_tensor({5, 6, 4}, 31, -40.0, 60.0);
    const Tensor out =
        batch_norm(ag::constant(z), ag::constant(Tensor({4}, 1.0)), ag::constant(Tensor({4}, 0.0)), st, Mode::kTrain)
            .value();
    for (std::size_t f = 0; f < 4; ++f) {
        double mean = 0.0, var = 0.0;
        for (std::size_t r = 0; r < 30; ++r) mean += out[r * 4 + f];
        mean /= 30.0;
        for (std::size_t r = 0; r < 30; ++r) var += (out[r * 4 + f] - mean) * (out[r * 4 + f] - mean);
        var /= 30.0;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
    // running stats moved 10% of the way toward the batch stats
    double batch_mean = 0.0;
    for (std::size_t r = 0; r < 30; ++r) batch_mean += z[r * 4];
    batch_mean /= 30.0;
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * batch_mean).epsilon(1e-12));
}

TEST_CASE("batch norm: momentum 1 freeze reproduces the train output in eval") {
    BatchNormState st(3, 1.0);
    const Tensor z = random_tensor({4, 5, 3}, 32, -3.0, 5.0);
    const Var gamma = ag::constant(random_tensor({3}, 33, 0.5, 2.0));
    const Var beta = ag::constant(random_tensor({3}, 34));
    const Tensor train = batch_norm(ag::constant(z), gamma, beta, st, Mode::kTrain).value();
    const Tensor eval = batch_norm(ag::constant(z), gamma, beta, st, Mode::kEval).value();
    CHECK(max_abs_diff(train, eval) < 1e-6);
}

TEST_CASE("batch norm: errors and gradients") {
    BatchNormState st(3);
    const Var one(Tensor({1, 1, 3}, 1.0));
    CHECK_THROWS_AS(batch_norm(one, ag::constant(Tensor({3}, 1.0)), ag::constant(Tensor({3}, 0.0)), st, Mode::kTrain),
                    ShapeError);
    CHECK_THROWS_AS(batch_norm(ag::constant(Tensor({2, 4}, 1.0)), ag::constant(Tensor({3}, 1.0)),
                               ag::constant(Tensor({3}, 0.0)), st, Mode::kEval),
                    ShapeError);

    Parameter z("z", random_tensor({3, 4, 3}, 35));
    Parameter gamma("gamma", random_tensor({3}, 36, 0.5, 1.5));
    Parameter beta("beta", random_tensor({3}, 37));
    const Tensor target = random_tensor({3, 4, 3}, 38);
    auto loss = [&] {
        BatchNormState local(3);
        return ag::mse_loss(batch_norm(z.var, gamma.var, beta.var, local, Mode::kTrain), ag::constant(target));
    };
    CHECK(grad_check(loss, {&z, &gamma, &beta}, 1e-5, 1e-4).passed());
}

TEST_CASE("adam: zero grad leaves parameters unchanged") {
    Parameter p("p", Tensor({3}, {1.0, -2.0, 3.0}));
    AdamState st;
    adam_step({&p}, AdamConfig{}, st);
    CHECK(p.value() == Tensor({3}, {1.0, -2.0, 3.0}));
}

TEST_CASE("adam: first step moves by -sign(g) lr") {
    Parameter p("p", Tensor({3}, 0.0));
    p.var.node()->accumulate(Tensor({3}, {2.0, -0.5, 1e-3}));
    AdamConfig cfg;
    cfg.lr = 0.01;
    AdamState st;
    adam_step({&p}, cfg, st);
    CHECK(p.value()[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value()[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.value()[2] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("adam: 200 steps on (w-3)^2 from 0 with lr 0.1") {
    Parameter w("w", Tensor({1}, 0.0));
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({&w}, cfg);

    // independent scalar recurrence
    double ref = 0.0, m = 0.0, v = 0.0;
    for (int step = 1; step <= 200; ++step) {
        opt.zero_grad();
        ag::backward(ag::sum(ag::mul(ag::sub(w.var, ag::constant(Tensor({1}, 3.0))),
                                     ag::sub(w.var, ag::constant(Tensor({1}, 3.0))))));
        opt.step();

        const double g = 2.0 * (ref - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, step));
        const double vh = v / (1.0 - std::pow(0.999, step));
        ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w.value()[0] == doctest::Approx(ref).epsilon(1e-12));
    CHECK(std::abs(w.value()[0] - 3.0) < 0.1);
    CHECK(opt.state().step == 200);
}

TEST_CASE("checkpoint round trip is exact") {
    const auto dir = testutil::temp_dir("ckpt");
    Checkpoint c;
    c.meta["note"] = "x";
    c.tensors.emplace_back("a", random_tensor({2, 3}, 41, -1e6, 1e6));
    c.tensors.emplace_back("b", Tensor({1}, {0.1}));
    c.tensors.emplace_back("tiny", Tensor({2}, {5e-324, -1.0 / 3.0}));
    save_checkpoint(dir / "c.json", c);
    const Checkpoint back = load_checkpoint(dir / "c.json");
    CHECK(back == c);
    CHECK(back.get("a") == c.get("a"));
    CHECK_THROWS_AS(back.get("zz"), ValidationError);

    testutil::write_file(dir / "bad.json", "{\"format\": \"other\"}");
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ValidationError);
    testutil::write_file(dir / "broken.json", "{");
    CHECK_THROWS_AS(load_checkpoint(dir / "broken.json"), ParseError);
}

TEST_CASE("parallel gemm equals the serial reference bitwise") {
    struct Case {
        std::size_t batch, m, n, k;
        bool ta, tb;
        bool share_a, share_b, reduce;
    };
    const std::vector<Case> cases{
        {1, 7, 5, 3, false, false, false, false, false},   {64, 17, 64, 17, false, false, true, false, false},
        {64, 17, 64, 17, true, false, true, false, false}, {32, 17, 33, 64, false, true, false, true, false},
        {40, 9, 13, 11, true, true, false, false, false},  {128, 64, 64, 17, true, false, false, false, true},
        {1, 1100, 64, 64, false, false, false, false, false}};
    std::uint64_t seed = 100;
    for (const auto& c : cases) {
        blas::GemmShape s;
        s.batch = c.batch;
        s.m = c.m;
        s.n = c.n;
        s.k = c.k;
        s.trans_a = c.ta;
        s.trans_b = c.tb;
        s.stride_a = c.share_a ? 0 : c.m * c.k;
        s.stride_b = c.share_b ? 0 : c.k * c.n;
        s.stride_c = c.reduce ? 0 : c.m * c.n;
        const std::size_t mats_c = c.reduce ? 1 : c.batch;
        const Tensor a = random_tensor({(c.share_a ? 1 : c.batch) * c.m * c.k}, seed++);
        const Tensor b = random_tensor({(c.share_b ? 1 : c.batch) * c.k * c.n}, seed++);
        for (bool acc : {false, true}) {
            s.accumulate = acc;
            Tensor c1 = random_tensor({mats_c * c.m * c.n}, seed);
            Tensor c2 = c1;
            blas::gemm(s, a.data().data(), b.data().data(), c1.data().data());
            blas::gemm_reference(s, a.data().data(), b.data().data(), c2.data().data());
            CHECK(c1 == c2);
        }
    }
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(7, 1, 2), b(7, 1, 2), c(7, 1, 3);
    std::vector<double> xa, xb, xc;
    for (int i = 0; i < 5; ++i) xa.push_back(a.normal()), xb.push_back(b.normal()), xc.push_back(c.normal());
    CHECK(xa == xb);
    CHECK(xa != xc);

    Rng r(123);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
    for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
}

}  // TEST_SUITE
