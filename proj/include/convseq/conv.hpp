#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "convseq/autodiff.hpp"
#include "convseq/rng.hpp"

namespace convseq {

enum class PaddingMode { centered, causal };

enum class NormalizerKind { none, softmax, sigmoid, tanh, l1, l2, square, abs, abs_l1, abs_l2 };

inline const char* normalizer_name(NormalizerKind k) {
    switch (k) {
        case NormalizerKind::none: return "none";
        case NormalizerKind::softmax: return "softmax";
        case NormalizerKind::sigmoid: return "sigmoid";
        case NormalizerKind::tanh: return "tanh";
        case NormalizerKind::l1: return "l1";
        case NormalizerKind::l2: return "l2";
        case NormalizerKind::square: return "square";
        case NormalizerKind::abs: return "abs";
        case NormalizerKind::abs_l1: return "abs_l1";
        case NormalizerKind::abs_l2: return "abs_l2";
    }
    return "?";
}

inline NormalizerKind normalizer_from_name(const std::string& s) {
    for (int i = 0; i <= int(NormalizerKind::abs_l2); ++i)
        if (s == normalizer_name(NormalizerKind(i))) return NormalizerKind(i);
    throw std::invalid_argument("unknown normalizer kind: " + s);
}

struct NormalizerConfig {
    NormalizerKind kind = NormalizerKind::softmax;
    double epsilon = 1e-6;
};

struct ConvConfig {
    std::size_t model_dim = 0;    // d, channels
    std::size_t heads = 1;        // H, weight-sharing groups
    std::size_t kernel_width = 1; // k
    PaddingMode padding = PaddingMode::centered;
    NormalizerConfig normalizer;
    double dropconnect_p = 0.0;

    void validate() const {
        require(model_dim > 0 && heads > 0 && kernel_width > 0, "ConvConfig: dims must be positive");
        require(model_dim % heads == 0, "ConvConfig: heads H=" + std::to_string(heads) +
                                            " must divide model_dim d=" + std::to_string(model_dim));
        require(padding == PaddingMode::causal || kernel_width % 2 == 1,
                "ConvConfig: centered padding requires odd kernel width");
        require(dropconnect_p >= 0.0 && dropconnect_p < 1.0,
                "ConvConfig: dropconnect_p must be in [0,1)");
    }
};

// Raw shared weights W in R^{H x k}.
struct ConvKernel {
    Tensor weights;
};

// Row-wise kernel normalization over the temporal (last) axis. Works for any
// leading shape, so per-position dynamic kernels reuse it unchanged.
inline Var normalize_kernel(Var w, const NormalizerConfig& cfg) {
    std::size_t last = w.value().rank() - 1;
    double eps = cfg.epsilon;
    switch (cfg.kind) {
        case NormalizerKind::none:
            return w;
        case NormalizerKind::softmax:
            return softmax(w, last);
        case NormalizerKind::sigmoid:
            return sigmoid(w);
        case NormalizerKind::tanh:
            return tanh_op(w);
        case NormalizerKind::l1:
            return div_rowwise(w, add_scalar(sum_axis(abs_op(w), last), eps));
        case NormalizerKind::l2:
            return div_rowwise(w, add_scalar(sqrt_op(sum_axis(square(w), last)), eps));
        case NormalizerKind::square:
            return square(w);
        case NormalizerKind::abs:
            return abs_op(w);
        case NormalizerKind::abs_l1:
            return div_rowwise(abs_op(w), add_scalar(sum_axis(abs_op(w), last), eps));
        case NormalizerKind::abs_l2:
            return div_rowwise(abs_op(w), add_scalar(sqrt_op(sum_axis(square(w), last)), eps));
    }
    throw std::invalid_argument("unknown normalizer kind");
}

// Group index of 0-based channel c when d channels are split into H contiguous
// groups. Equals the 1-based ceil(c*H/d) formula shifted down by one.
inline std::size_t channel_group(std::size_t c, std::size_t d, std::size_t H) {
    return c * H / d;
}

// Expand shared weights [H,k] to one row per channel [d,k].
inline Var expand_shared_weights(Var w, std::size_t d) {
    const Tensor& wv = w.value();
    require(wv.rank() == 2, "expand_shared_weights: expected [H,k]");
    std::size_t H = wv.shape[0];
    require(d % H == 0, "expand_shared_weights: H=" + std::to_string(H) +
                            " must divide d=" + std::to_string(d));
    std::vector<long long> ids(d);
    for (std::size_t c = 0; c < d; ++c) ids[c] = (long long)channel_group(c, d, H);
    return gather_rows(w, ids);
}

// DropConnect on normalized weights: each entry zeroed with probability p,
// survivors scaled by 1/(1-p). Identity in eval mode.
inline Var dropconnect(Var wn, double p, Rng& rng, bool training) {
    require(p >= 0.0 && p < 1.0, "dropconnect: p must be in [0,1)");
    if (!training || p == 0.0) return wn;
    Tensor mask(wn.value().shape);
    double keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.numel(); ++i)
        mask.data[i] = rng.uniform() >= p ? keep : 0.0;
    return mul(wn, wn.tape->constant(std::move(mask)));
}

// Standard dropout on activations, same convention as dropconnect.
inline Var dropout(Var x, double p, Rng& rng, bool training) {
    return dropconnect(x, p, rng, training);
}

inline Var depthwise_conv(Var x, Var w, const ConvConfig& cfg) {
    return depthwise_conv(x, w, cfg.padding == PaddingMode::causal);
}

// normalize -> dropconnect -> expand over channels -> depthwise convolution.
inline Var lightconv(Var x, Var kernel, const ConvConfig& cfg, Rng& rng, bool training) {
    cfg.validate();
    const Tensor& kv = kernel.value();
    require(kv.rank() == 2 && kv.shape[0] == cfg.heads && kv.shape[1] == cfg.kernel_width,
            "lightconv: kernel " + shape_str(kv.shape) + " does not match config H=" +
                std::to_string(cfg.heads) + " k=" + std::to_string(cfg.kernel_width));
    Var wn = normalize_kernel(kernel, cfg.normalizer);
    wn = dropconnect(wn, cfg.dropconnect_p, rng, training);
    Var wd = expand_shared_weights(wn, cfg.model_dim);
    return depthwise_conv(x, wd, cfg.padding == PaddingMode::causal);
}

namespace detail {
// Normalize a raw kernel tensor outside any caller-visible tape.
inline Tensor normalize_kernel_tensor(const Tensor& w, const NormalizerConfig& cfg) {
    Tape t;
    return normalize_kernel(t.leaf(w), cfg).value();
}

// Band matrix [B*H, n, n] from per-(b,h) kernel rows. row(i) carries kernel
// slot j at column conv_src(i,j), so each row has at most k nonzeros.
inline Tensor band_from_kernels(const std::function<double(std::size_t b, std::size_t h,
                                                           std::size_t i, std::size_t j)>& wfun,
                                std::size_t B, std::size_t H, std::size_t n, std::size_t k,
                                bool causal) {
    Tensor band({B * H, n, n});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    long long src = kernels::conv_src((long long)i, (long long)j, (long long)k,
                                                      causal);
                    if (src < 0 || src >= (long long)n) continue;
                    band.at3(b * H + h, i, (std::size_t)src) = wfun(b, h, i, j);
                }
    return band;
}

// [B,n,d] -> [B*H, n, d/H] with channel groups peeled onto the batch axis.
inline Tensor regroup_input(const Tensor& x, std::size_t H) {
    std::size_t B = x.shape[0], n = x.shape[1], d = x.shape[2], m = d / H;
    Tensor out({B * H, n, m});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c)
                out.at3(b * H + c / m, i, c % m) = x.at3(b, i, c);
    return out;
}

inline Tensor ungroup_output(const Tensor& y, std::size_t B, std::size_t H) {
    std::size_t n = y.shape[1], m = y.shape[2], d = H * m;
    Tensor out({B, n, d});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c)
                out.at3(b, i, c) = y.at3(b * H + c / m, i, c % m);
    return out;
}
}  // namespace detail

// Band-matrix route: expand normalized weights to a [B*H, n, n] band matrix,
// regroup inputs to [B*H, n, d/H], batch-multiply, regroup back. Eval path
// only; no DropConnect.
inline Tensor lightconv_band_matrix(const Tensor& x, const ConvKernel& kernel,
                                    const ConvConfig& cfg) {
    cfg.validate();
    require(x.rank() == 3, "lightconv_band_matrix: expected [B,n,d]");
    std::size_t B = x.shape[0], n = x.shape[1], d = x.shape[2];
    require(d == cfg.model_dim, "lightconv_band_matrix: input channels do not match config");
    std::size_t H = cfg.heads, k = cfg.kernel_width, m = d / H;
    bool causal = cfg.padding == PaddingMode::causal;
    Tensor wn = detail::normalize_kernel_tensor(kernel.weights, cfg.normalizer);
    Tensor band = detail::band_from_kernels(
        [&](std::size_t, std::size_t h, std::size_t, std::size_t j) { return wn.at2(h, j); }, B, H,
        n, k, causal);
    Tensor xg = detail::regroup_input(x, H);
    Tensor y({B * H, n, m});
    for (std::size_t bh = 0; bh < B * H; ++bh)
        kernels::gemm_nn(band.data.data() + bh * n * n, xg.data.data() + bh * n * m,
                         y.data.data() + bh * n * m, n, n, m);
    return detail::ungroup_output(y, B, H);
}

// Parameter counts for a d-channel width-k convolution:
// non-separable d^2*k, depthwise d*k, shared H*k.
struct ParamCounts {
    std::uint64_t non_separable, depthwise, shared;
};

inline ParamCounts count_params(std::size_t d, std::size_t k, std::size_t H) {
    return ParamCounts{std::uint64_t(d) * d * k, std::uint64_t(d) * k, std::uint64_t(H) * k};
}

inline ParamCounts count_params(const ConvConfig& cfg) {
    return count_params(cfg.model_dim, cfg.kernel_width, cfg.heads);
}

}  // namespace convseq
