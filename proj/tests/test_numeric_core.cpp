#include <catch2/catch_amalgamated.hpp>

#include "convseq/autodiff.hpp"
#include "convseq/grad_check.hpp"
#include "convseq/rng.hpp"

using namespace convseq;

namespace {
Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}
}  // namespace

TEST_CASE("tensor row-major indexing round trip") {
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) t.at3(i, j, k) = double(i * 100 + j * 10 + k);
    REQUIRE(t.numel() == 24);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k)
                REQUIRE(t.data[(i * 3 + j) * 4 + k] == double(i * 100 + j * 10 + k));
}

TEST_CASE("tensor shape/data length mismatch throws") {
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("matmul identity and dot product") {
    Tape t;
    Var I = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    Var A = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    REQUIRE(max_abs_diff(matmul(I, A).value(), A.value()) < 1e-12);
    REQUIRE(max_abs_diff(matmul(A, I).value(), A.value()) < 1e-12);

    Var r = t.leaf(Tensor({1, 2}, {1, 2}));
    Var c = t.leaf(Tensor({2, 1}, {3, 4}));
    REQUIRE(matmul(r, c).value().data[0] == 11.0);
}

TEST_CASE("matmul batch consistency") {
    Tape t;
    Tensor a2({2, 2}, {1, 2, 3, 4});
    Tensor b2({2, 2}, {5, 6, 7, 8});
    Tensor ab({2, 2, 2});
    Tensor bb({2, 2, 2});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 4; ++i) {
            ab.data[b * 4 + i] = a2.data[i];
            bb.data[b * 4 + i] = b2.data[i];
        }
    Tensor single = matmul(t.leaf(a2), t.leaf(b2)).value();
    Tensor batch = matmul(t.leaf(ab), t.leaf(bb)).value();
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 4; ++i) REQUIRE(batch.data[b * 4 + i] == single.data[i]);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Var a = t.leaf(Tensor({2, 3}));
    Var b = t.leaf(Tensor({2, 2}));
    REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                          Catch::Matchers::ContainsSubstring("[2x2]"));
}

TEST_CASE("softmax basics") {
    Tape t;
    Tensor u = softmax(t.leaf(Tensor({3}, {0, 0, 0})), 0).value();
    for (double v : u.data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));

    Tensor w = softmax(t.leaf(Tensor({2}, {0.0, std::log(2.0)})), 0).value();
    REQUIRE_THAT(w.data[0], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-14));
    REQUIRE_THAT(w.data[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-14));

    Tensor big = softmax(t.leaf(Tensor({2}, {1000.0, 1000.0})), 0).value();
    REQUIRE(big.data[0] == 0.5);
    REQUIRE(big.data[1] == 0.5);
}

TEST_CASE("softmax rows sum to 1 and shift invariance") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, -50.0, 50.0);
        Tape t;
        Tensor y = softmax(t.leaf(x), 1).value();
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                REQUIRE(y.at2(r, j) > 0.0);
                s += y.at2(r, j);
            }
            REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
        double c = rng.uniform(-30.0, 30.0);
        Tensor xs = x;
        for (auto& v : xs.data) v += c;
        Tensor ys = softmax(t.leaf(xs), 1).value();
        REQUIRE(max_abs_diff(y, ys) < 1e-12);
    }
}

TEST_CASE("elementwise suite values") {
    Tape t;
    REQUIRE(sigmoid(t.leaf(Tensor::scalar(0.0))).value().data[0] == 0.5);
    REQUIRE(relu(t.leaf(Tensor::scalar(-3.0))).value().data[0] == 0.0);
    REQUIRE(sum(t.leaf(Tensor({3}, {1, 2, 3}))).value().data[0] == 6.0);
    REQUIRE(mean(t.leaf(Tensor({3}, {1, 2, 3}))).value().data[0] == 2.0);
    REQUIRE(abs_op(t.leaf(Tensor::scalar(-2.5))).value().data[0] == 2.5);
    REQUIRE(square(t.leaf(Tensor::scalar(-3.0))).value().data[0] == 9.0);
    REQUIRE_THAT(tanh_op(t.leaf(Tensor::scalar(1.0))).value().data[0],
                 Catch::Matchers::WithinAbs(std::tanh(1.0), 1e-15));
}

TEST_CASE("binary op shape mismatch throws") {
    Tape t;
    Var a = t.leaf(Tensor({3}));
    Var b = t.leaf(Tensor({4}));
    REQUIRE_THROWS_AS(add(a, b), std::invalid_argument);
    REQUIRE_THROWS_AS(mul(a, b), std::invalid_argument);
}

TEST_CASE("layer_norm examples") {
    Tape t;
    Var gain = t.leaf(Tensor({2}, {1, 1}));
    Var bias = t.leaf(Tensor({2}, {0, 0}));

    Tensor c = layer_norm(t.leaf(Tensor({2}, {5, 5})), gain, bias).value();
    REQUIRE(max_abs_diff(c, Tensor({2}, {0, 0})) < 1e-12);

    Tensor pm = layer_norm(t.leaf(Tensor({2}, {1, -1})), gain, bias).value();
    REQUIRE_THAT(pm.data[0], Catch::Matchers::WithinAbs(1.0, 1e-5));
    REQUIRE_THAT(pm.data[1], Catch::Matchers::WithinAbs(-1.0, 1e-5));

    Var g0 = t.leaf(Tensor({2}, {0, 0}));
    Var b7 = t.leaf(Tensor({2}, {7, -3}));
    Tensor bc = layer_norm(t.leaf(Tensor({2}, {2, 9})), g0, b7).value();
    REQUIRE(max_abs_diff(bc, Tensor({2}, {7, -3})) < 1e-12);
}

TEST_CASE("backward examples") {
    {
        Tape t;
        Var x = t.leaf(Tensor({3}, {1, 2, 3}));
        t.backward(sum(x));
        REQUIRE(max_abs_diff(x.grad(), Tensor({3}, {1, 1, 1})) < 1e-15);
    }
    {
        Tape t;
        Var x = t.leaf(Tensor({2}, {1, 2}));
        t.backward(sum(mul(x, x)));
        REQUIRE(max_abs_diff(x.grad(), Tensor({2}, {2, 4})) < 1e-15);
    }
    {
        // value consumed twice accumulates both contributions
        Tape t;
        Var x = t.leaf(Tensor::scalar(3.0));
        t.backward(add(x, x));
        REQUIRE(x.grad().data[0] == 2.0);
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape t;
    Var x = t.leaf(Tensor({2}, {1, 2}));
    REQUIRE_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("grad_check oracle behavior") {
    Tensor x({3}, {0.3, -0.7, 1.2});
    auto quad = [](Tape& t, Var p) { return sum(mul(p, p)); };
    auto rep = grad_check(quad, x, 1e-7);
    REQUIRE(rep.pass);
    REQUIRE(rep.max_rel_err < 1e-7);

    auto lin = [](Tape& t, Var p) { return sum(scale(p, 3.0)); };
    auto rep2 = grad_check(lin, x, 1e-9);
    REQUIRE(rep2.pass);

    // negative control: gradient off by 2x must fail
    auto corrupted = [](Tape& t, Var p) { return scale(sum(mul(p, p)), 0.5); };
    Tape tape;
    Var p = tape.leaf(x);
    tape.backward(sum(mul(p, p)));
    Tensor analytic_2x = p.grad();
    Tape t2;
    Var p2 = t2.leaf(x);
    t2.backward(corrupted(t2, p2));
    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double rel = std::abs(analytic_2x.data[i] - p2.grad().data[i]) /
                     std::max({std::abs(analytic_2x.data[i]), 1e-8});
        worst = std::max(worst, rel);
    }
    REQUIRE(worst > 1e-4);  // the corrupted path disagrees with the true gradient
}

TEST_CASE("grad_check passes for every primitive") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        Tensor x = random_tensor({3, 5}, rng);
        Tensor y = random_tensor({3, 5}, rng);
        Tensor m = random_tensor({5, 4}, rng);
        auto ok = [&](const std::function<Var(Tape&, Var)>& f, const Tensor& th) {
            auto rep = grad_check(f, th, 1e-4);
            INFO(rep.message);
            REQUIRE(rep.pass);
        };
        ok([&](Tape& t, Var p) { return sum(add(p, t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(p, t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(sigmoid(p), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(tanh_op(p), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(relu(p), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(abs_op(p), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(square(p)); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(softmax(p, 1), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(mul(log_softmax(p, 1), t.constant(y))); }, x);
        ok([&](Tape& t, Var p) { return sum(square(matmul(p, t.constant(m)))); }, x);
        ok([&](Tape& t, Var p) { return sum(square(matmul(t.constant(x), p))); }, m);
        Tensor w3 = random_tensor({3}, rng);
        Tensor gln = random_tensor({5}, rng);
        Tensor bln = random_tensor({5}, rng);
        Tensor y53 = random_tensor({5, 3}, rng);
        ok([&](Tape& t, Var p) { return sum(mul(mean_axis(p, 1), t.constant(w3))); }, x);
        ok([&](Tape& t, Var p) {
            Var g = t.constant(gln);
            Var b = t.constant(bln);
            return sum(mul(layer_norm(p, g, b), t.constant(y)));
        },
           x);
        ok([&](Tape& t, Var p) { return sum(mul(permute(p, {1, 0}), t.constant(y53))); }, x);
        ok([&](Tape& t, Var p) { return sum(square(slice_last(p, 1, 4))); }, x);
        ok([&](Tape& t, Var p) {
            Var s = add_scalar(sum_axis(square(p), 1), 0.5);
            return sum(mul(div_rowwise(p, s), t.constant(y)));
        },
           x);
        Tensor table = random_tensor({6, 4}, rng);
        ok([&](Tape& t, Var p) {
            return sum(square(gather_rows(p, {0, 3, 3, 5})));
        },
           table);
    }
}

TEST_CASE("tape determinism: repeated runs produce identical gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({4, 4}, rng);
        Tensor w = random_tensor({4, 4}, rng);
        Tape t;
        Var xv = t.leaf(x);
        Var wv = t.leaf(w);
        Var out = sum(square(tanh_op(matmul(xv, wv))));
        t.backward(out);
        return std::make_pair(xv.grad(), wv.grad());
    };
    auto [gx1, gw1] = run(42);
    auto [gx2, gw2] = run(42);
    REQUIRE(gx1.data == gx2.data);
    REQUIRE(gw1.data == gw2.data);
}

TEST_CASE("rng determinism and substreams") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng s0 = Rng(1).stream(0), s1 = Rng(1).stream(1);
    REQUIRE(s0.next_u64() != s1.next_u64());
    double u = Rng(5).uniform();
    REQUIRE((u >= 0.0 && u < 1.0));
}
