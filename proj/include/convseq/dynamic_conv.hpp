#pragma once

#include "convseq/conv.hpp"

namespace convseq {

// Linear kernel predictor W^Q in R^{H x k x d}; no bias, so a zero input
// yields a zero raw kernel (uniform after softmax).
struct DynamicKernelPredictor {
    Tensor weights;

    void validate(std::size_t H, std::size_t k, std::size_t d) const {
        require(weights.rank() == 3 && weights.shape[0] == H && weights.shape[1] == k &&
                    weights.shape[2] == d,
                "DynamicKernelPredictor: weights " + shape_str(weights.shape) +
                    " do not match H x k x d");
    }
};

// Raw per-position kernels: [.., n, d] x [H,k,d] -> [.., n, H, k].
// The kernel at position i depends on x_i only.
inline Var predict_kernels(Var x, Var wq) {
    const Tensor& xv = x.value();
    const Tensor& wv = wq.value();
    require(wv.rank() == 3, "predict_kernels: predictor must be [H,k,d]");
    std::size_t H = wv.shape[0], k = wv.shape[1], d = wv.shape[2];
    require(xv.shape.back() == d, "predict_kernels: input channels " +
                                      std::to_string(xv.shape.back()) + " do not match predictor d=" +
                                      std::to_string(d));
    Var wt = permute(reshape(wq, {H * k, d}), {1, 0});  // [d, H*k]
    Var raw = matmul(x, wt);                            // [.., n, H*k]
    Shape out_shape = xv.shape;
    out_shape.back() = H;
    out_shape.push_back(k);
    return reshape(raw, out_shape);
}

// Per-position LightConv: predict -> normalize -> dropconnect -> grouped
// depthwise convolution with the position's own kernel.
inline Var dynamic_conv(Var x, Var wq, const ConvConfig& cfg, Rng& rng, bool training) {
    cfg.validate();
    const Tensor& wv = wq.value();
    require(wv.rank() == 3 && wv.shape[0] == cfg.heads && wv.shape[1] == cfg.kernel_width &&
                wv.shape[2] == cfg.model_dim,
            "dynamic_conv: predictor " + shape_str(wv.shape) + " does not match config");
    Var kern = predict_kernels(x, wq);
    kern = normalize_kernel(kern, cfg.normalizer);
    kern = dropconnect(kern, cfg.dropconnect_p, rng, training);
    return dynamic_depthwise_conv(x, kern, cfg.padding == PaddingMode::causal);
}

// Band-matrix route for the dynamic case: each band row i is filled from the
// kernel predicted at position i. Eval path only.
inline Tensor dynamic_conv_band_matrix(const Tensor& x, const DynamicKernelPredictor& pred,
                                       const ConvConfig& cfg) {
    cfg.validate();
    require(x.rank() == 3, "dynamic_conv_band_matrix: expected [B,n,d]");
    std::size_t B = x.shape[0], n = x.shape[1], d = x.shape[2];
    require(d == cfg.model_dim, "dynamic_conv_band_matrix: channels do not match config");
    pred.validate(cfg.heads, cfg.kernel_width, d);
    std::size_t H = cfg.heads, k = cfg.kernel_width, m = d / H;
    bool causal = cfg.padding == PaddingMode::causal;

    Tensor kern;
    {
        Tape t;
        Var kv = predict_kernels(t.leaf(x), t.leaf(pred.weights));
        kern = normalize_kernel(kv, cfg.normalizer).value();  // [B,n,H,k]
    }
    Tensor band = detail::band_from_kernels(
        [&](std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
            return kern.at4(b, i, h, j);
        },
        B, H, n, k, causal);
    Tensor xg = detail::regroup_input(x, H);
    Tensor y({B * H, n, m});
    for (std::size_t bh = 0; bh < B * H; ++bh)
        kernels::gemm_nn(band.data.data() + bh * n * n, xg.data.data() + bh * n * m,
                         y.data.data() + bh * n * m, n, n, m);
    return detail::ungroup_output(y, B, H);
}

// Multiply-accumulate count: kernel prediction n*H*k*d plus convolution n*k*d.
inline std::uint64_t count_ops_dynamic(std::uint64_t n, std::uint64_t d, std::uint64_t H,
                                       std::uint64_t k) {
    return n * H * k * d + n * k * d;
}

// Context cost of the fixed-kernel convolution.
inline std::uint64_t count_ops_lightconv(std::uint64_t n, std::uint64_t d, std::uint64_t k) {
    return n * k * d;
}

}  // namespace convseq
