#include <catch2/catch_amalgamated.hpp>

#include "convseq/dynamic_conv.hpp"
#include "convseq/grad_check.hpp"

using namespace convseq;

namespace {
Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

ConvConfig make_cfg(std::size_t d, std::size_t H, std::size_t k, PaddingMode pad,
                    NormalizerKind norm = NormalizerKind::softmax) {
    ConvConfig cfg;
    cfg.model_dim = d;
    cfg.heads = H;
    cfg.kernel_width = k;
    cfg.padding = pad;
    cfg.normalizer.kind = norm;
    return cfg;
}
}  // namespace

TEST_CASE("predict_kernels: zero input gives uniform softmax kernel") {
    Tape t;
    Rng rng(1);
    Var wq = t.leaf(random_tensor({2, 3, 4}, rng));
    Var x = t.leaf(Tensor({1, 4}));  // one zero position
    Tensor raw = predict_kernels(x, wq).value();
    REQUIRE(max_abs_diff(raw, Tensor({1, 2, 3})) == 0.0);
    NormalizerConfig n;
    Tensor k = normalize_kernel(predict_kernels(x, wq), n).value();
    for (double v : k.data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
}

TEST_CASE("predict_kernels: direct contraction for d=1") {
    // W^Q_{h,j,1} = j (1-based), x_i = 2 -> raw kernel row [2,4,...,2k]
    std::size_t k = 4;
    Tensor wq({1, k, 1});
    for (std::size_t j = 0; j < k; ++j) wq.data[j] = double(j + 1);
    Tape t;
    Tensor raw = predict_kernels(t.leaf(Tensor({1, 1}, {2.0})), t.leaf(wq)).value();
    for (std::size_t j = 0; j < k; ++j) REQUIRE(raw.data[j] == 2.0 * double(j + 1));
}

TEST_CASE("predict_kernels: identical positions get identical kernels") {
    Rng rng(2);
    Tensor wq = random_tensor({2, 3, 5}, rng);
    Tensor x({4, 5});
    Tensor row = random_tensor({5}, rng);
    for (std::size_t j = 0; j < 5; ++j) {
        x.at2(1, j) = row.data[j];
        x.at2(3, j) = row.data[j];
    }
    Tape t;
    Tensor kern = predict_kernels(t.leaf(x), t.leaf(wq)).value();
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(kern.at3(1, h, j) == kern.at3(3, h, j));
}

TEST_CASE("kernel locality: perturbing x_j leaves kernel at i unchanged") {
    Rng rng(3);
    Tensor wq = random_tensor({2, 3, 4}, rng);
    Tensor x = random_tensor({5, 4}, rng);
    Tensor xp = x;
    for (std::size_t c = 0; c < 4; ++c) xp.at2(2, c) += 1.0;
    Tape t;
    Tensor k1 = predict_kernels(t.leaf(x), t.leaf(wq)).value();
    Tensor k2 = predict_kernels(t.leaf(xp), t.leaf(wq)).value();
    for (std::size_t i = 0; i < 5; ++i) {
        if (i == 2) continue;
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t j = 0; j < 3; ++j) REQUIRE(k1.at3(i, h, j) == k2.at3(i, h, j));
    }
}

TEST_CASE("dynamic_conv: uniform kernels on constant input give the window average") {
    ConvConfig cfg = make_cfg(4, 2, 3, PaddingMode::causal);
    Tape t;
    Rng rng(0);
    Var wq = t.leaf(Tensor({2, 3, 4}));  // zero predictor -> uniform kernels
    Var x = t.leaf(Tensor::full({6, 4}, 1.5));
    Tensor y = dynamic_conv(x, wq, cfg, rng, false).value();
    for (std::size_t i = 2; i < 6; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            REQUIRE_THAT(y.at2(i, c), Catch::Matchers::WithinAbs(1.5, 1e-12));
    // leading positions see zero padding: average of the partial window
    for (std::size_t c = 0; c < 4; ++c)
        REQUIRE_THAT(y.at2(0, c), Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("dynamic_conv: n=1 causal single-term evaluation") {
    ConvConfig cfg = make_cfg(2, 1, 3, PaddingMode::causal);
    Rng rng(4);
    Tensor wq = random_tensor({1, 3, 2}, rng);
    Tensor x = random_tensor({1, 2}, rng);
    Tape t;
    Tensor y = dynamic_conv(t.leaf(x), t.leaf(wq), cfg, rng, false).value();
    // hand evaluation: raw kernel, softmax over k, last slot covers position 1
    double raw[3];
    for (int j = 0; j < 3; ++j) raw[j] = wq.at3(0, j, 0) * x.data[0] + wq.at3(0, j, 1) * x.data[1];
    double mx = std::max({raw[0], raw[1], raw[2]});
    double s = std::exp(raw[0] - mx) + std::exp(raw[1] - mx) + std::exp(raw[2] - mx);
    double w_last = std::exp(raw[2] - mx) / s;
    REQUIRE_THAT(y.at2(0, 0), Catch::Matchers::WithinAbs(w_last * x.data[0], 1e-14));
    REQUIRE_THAT(y.at2(0, 1), Catch::Matchers::WithinAbs(w_last * x.data[1], 1e-14));
}

TEST_CASE("dynamic_conv reduces to lightconv for a constant kernel field") {
    Rng rng(5);
    ConvConfig cfg = make_cfg(6, 2, 3, PaddingMode::centered);
    Tensor x = random_tensor({5, 6}, rng);
    Tensor w = random_tensor({2, 3}, rng);
    Rng r0(0), r1(0);
    Tape t;
    Tensor ylight = lightconv(t.leaf(x), t.leaf(w), cfg, r0, false).value();
    // broadcast the fixed kernel to every position, then run the dynamic path
    Tensor kern({5, 2, 3});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t j = 0; j < 3; ++j) kern.at3(i, h, j) = w.at2(h, j);
    Var kn = normalize_kernel(t.leaf(kern), cfg.normalizer);
    Tensor ydyn = dynamic_depthwise_conv(t.leaf(x), kn, false).value();
    REQUIRE(max_abs_diff(ylight, ydyn) < 1e-12);
}

TEST_CASE("dynamic_conv softmax rows sum to 1 per position") {
    Rng rng(6);
    Tensor wq = random_tensor({2, 5, 4}, rng);
    Tensor x = random_tensor({7, 4}, rng, -3.0, 3.0);
    Tape t;
    NormalizerConfig n;
    Tensor kern = normalize_kernel(predict_kernels(t.leaf(x), t.leaf(wq)), n).value();
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t h = 0; h < 2; ++h) {
            double s = 0.0;
            for (std::size_t j = 0; j < 5; ++j) s += kern.at3(i, h, j);
            REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
}

TEST_CASE("dynamic_conv causality") {
    Rng rng(7);
    ConvConfig cfg = make_cfg(4, 2, 3, PaddingMode::causal);
    Tensor wq = random_tensor({2, 3, 4}, rng);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor xp = x;
    for (std::size_t c = 0; c < 4; ++c) xp.at2(5, c) = rng.uniform(-5.0, 5.0);
    Rng r0(0), r1(0);
    Tape t0, t1;
    Tensor y0 = dynamic_conv(t0.leaf(x), t0.leaf(wq), cfg, r0, false).value();
    Tensor y1 = dynamic_conv(t1.leaf(xp), t1.leaf(wq), cfg, r1, false).value();
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 4; ++c) REQUIRE(y0.at2(i, c) == y1.at2(i, c));
}

TEST_CASE("dynamic_conv grad check w.r.t. x and W^Q") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        ConvConfig cfg = make_cfg(4, 2, 3,
                                  seed % 2 ? PaddingMode::causal : PaddingMode::centered);
        Tensor x = random_tensor({4, 4}, rng);
        Tensor wq = random_tensor({2, 3, 4}, rng);
        Tensor dir = random_tensor({4, 4}, rng);
        auto repx = grad_check(
            [&](Tape& t, Var p) {
                Rng r(0);
                return sum(mul(dynamic_conv(p, t.constant(wq), cfg, r, false), t.constant(dir)));
            },
            x, 1e-4);
        INFO(repx.message);
        REQUIRE(repx.pass);
        auto repw = grad_check(
            [&](Tape& t, Var p) {
                Rng r(0);
                return sum(mul(dynamic_conv(t.constant(x), p, cfg, r, false), t.constant(dir)));
            },
            wq, 1e-4);
        INFO(repw.message);
        REQUIRE(repw.pass);
    }
}

TEST_CASE("dynamic band-matrix path equals the direct loop") {
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t H = 1 + rng.uniform_int(0, 3);
        std::size_t d = H * (1 + rng.uniform_int(0, 1)) * 2;
        std::size_t n = 2 + rng.uniform_int(0, 6);
        std::size_t k = 1 + 2 * rng.uniform_int(0, 2);
        PaddingMode pad = trial % 2 ? PaddingMode::causal : PaddingMode::centered;
        ConvConfig cfg = make_cfg(d, H, k, pad);
        std::size_t B = 1 + rng.uniform_int(0, 2);
        Tensor x = random_tensor({B, n, d}, rng);
        DynamicKernelPredictor pred{random_tensor({H, k, d}, rng)};

        Tape t;
        Rng r0(0);
        Tensor direct = dynamic_conv(t.leaf(x), t.leaf(pred.weights), cfg, r0, false).value();
        Tensor band = dynamic_conv_band_matrix(x, pred, cfg);
        REQUIRE(max_abs_diff(direct, band) < 1e-10);
    }
}

TEST_CASE("count_ops_dynamic") {
    // n*H*k*d = 1024*16*31*1024 plus n*k*d = 1024*31*1024
    REQUIRE(count_ops_dynamic(1024, 1024, 16, 31) == 520093696ull + 32505856ull);
    REQUIRE(count_ops_dynamic(7, 3, 1, 1) == 7ull * 3 + 7ull * 3);
    for (std::uint64_t n : {1ull, 5ull, 64ull, 333ull})
        REQUIRE(count_ops_dynamic(2 * n, 8, 2, 3) == 2 * count_ops_dynamic(n, 8, 2, 3));
}
