#pragma once

#include <cstdint>
#include <optional>

#include "convseq/autodiff.hpp"

namespace convseq {

// Additive mask value; underflows to an exact zero weight after softmax at
// double precision.
inline constexpr double kMaskedLogit = -1e30;

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // [d,d], bias-free
    std::size_t heads = 1;
    std::size_t window = 0;  // 0 = unlimited

    void validate() const {
        require(wq.rank() == 2 && wq.shape[0] == wq.shape[1], "AttentionParams: wq must be [d,d]");
        require(wk.same_shape(wq) && wv.same_shape(wq) && wo.same_shape(wq),
                "AttentionParams: projection shapes disagree");
        require(wq.shape[0] % heads == 0, "AttentionParams: heads must divide d");
    }
};

// Tape-bound projection weights.
struct AttentionVars {
    Var wq, wk, wv, wo;
    std::size_t heads = 1;
    std::size_t window = 0;
};

// Additive mask [n_q, n_k]. Causal forbids j > i; a window of w keeps the w-1
// nearest allowed keys plus the query itself (past-only when causal, centered
// otherwise).
inline Tensor build_attention_mask(std::size_t n_q, std::size_t n_k, bool causal,
                                   std::size_t window = 0) {
    Tensor mask({n_q, n_k});
    for (std::size_t i = 0; i < n_q; ++i)
        for (std::size_t j = 0; j < n_k; ++j) {
            bool allowed = true;
            if (causal && j > i) allowed = false;
            if (allowed && window > 0) {
                long long di = (long long)j - (long long)i;
                if (causal)
                    allowed = di > -(long long)window;
                else
                    allowed = di >= -(long long)(window / 2) && di <= (long long)(window / 2);
            }
            mask.at2(i, j) = allowed ? 0.0 : kMaskedLogit;
        }
    return mask;
}

// softmax(Q K^T / sqrt(d_k)) V for a single head. Mask entries at kMaskedLogit
// forbid attention; a fully-masked query row cannot be normalized and is a
// contract error.
inline Var scaled_dot_attention(Var q, Var k, Var v, const Tensor* mask = nullptr) {
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    require(qv.rank() >= 2 && kv.rank() == qv.rank() && v.value().rank() == qv.rank(),
            "scaled_dot_attention: rank mismatch");
    std::size_t dk = qv.shape.back();
    require(kv.shape.back() == dk, "scaled_dot_attention: d_k mismatch");
    if (mask) {
        std::size_t n_k = mask->shape.back();
        std::size_t rows = mask->numel() / n_k;
        for (std::size_t r = 0; r < rows; ++r) {
            bool any = false;
            for (std::size_t j = 0; j < n_k; ++j)
                if (mask->data[r * n_k + j] > kMaskedLogit / 2) any = true;
            require(any, "scaled_dot_attention: fully-masked query row " + std::to_string(r));
        }
    }
    std::vector<std::size_t> tr(qv.rank());
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    std::swap(tr[tr.size() - 1], tr[tr.size() - 2]);
    Var logits = scale(matmul(q, permute(k, tr)), 1.0 / std::sqrt(double(dk)));
    if (mask) logits = add(logits, q.tape->constant(*mask));
    Var weights = softmax(logits, qv.rank() - 1);
    return matmul(weights, v);
}

namespace detail {
// [B,n,d] -> [B,H,n,d/H]
inline Var split_heads(Var x, std::size_t H) {
    const Shape& s = x.value().shape;
    std::size_t B = s[0], n = s[1], d = s[2];
    return permute(reshape(x, {B, n, H, d / H}), {0, 2, 1, 3});
}

inline Var merge_heads(Var x) {
    const Shape& s = x.value().shape;
    std::size_t B = s[0], H = s[1], n = s[2], dk = s[3];
    return reshape(permute(x, {0, 2, 1, 3}), {B, n, H * dk});
}

inline Var lift_seq(Var x, bool& was_2d) {
    const Shape& s = x.value().shape;
    was_2d = s.size() == 2;
    return was_2d ? reshape(x, {1, s[0], s[1]}) : x;
}
}  // namespace detail

// Multi-head attention with separate query and key/value sources. The mask, if
// given, must broadcast over [B,H,n_q,n_k] (e.g. shape [n_q,n_k], or the full
// shape for per-batch padding masks).
inline Var multi_head_attention(Var q_src, Var kv_src, const AttentionVars& p,
                                const Tensor* mask = nullptr) {
    bool q2d = false, kv2d = false;
    Var qs = detail::lift_seq(q_src, q2d);
    Var ks = detail::lift_seq(kv_src, kv2d);
    std::size_t H = p.heads;
    Var qh = detail::split_heads(matmul(qs, p.wq), H);
    Var kh = detail::split_heads(matmul(ks, p.wk), H);
    Var vh = detail::split_heads(matmul(ks, p.wv), H);
    Var ctx = scaled_dot_attention(qh, kh, vh, mask);
    Var out = matmul(detail::merge_heads(ctx), p.wo);
    if (q2d) {
        const Shape& s = out.value().shape;
        out = reshape(out, {s[1], s[2]});
    }
    return out;
}

inline Var multi_head_self_attention(Var x, const AttentionVars& p, bool causal,
                                     const Tensor* extra_mask = nullptr) {
    std::size_t n = x.value().shape[x.value().rank() - 2];
    if (extra_mask) return multi_head_attention(x, x, p, extra_mask);
    if (causal || p.window > 0) {
        Tensor mask = build_attention_mask(n, n, causal, p.window);
        return multi_head_attention(x, x, p, &mask);
    }
    return multi_head_attention(x, x, p, nullptr);
}

// Queries from the decoder stream, keys/values projected from the encoder
// output. No causal mask over the source.
inline Var source_target_attention(Var decoder_x, Var encoder_out, const AttentionVars& p,
                                   const Tensor* pad_mask = nullptr) {
    return multi_head_attention(decoder_x, encoder_out, p, pad_mask);
}

// Convenience overloads binding Tensor-level params on the input's tape.
inline AttentionVars bind_attention(Tape& t, const AttentionParams& p) {
    p.validate();
    return AttentionVars{t.leaf(p.wq), t.leaf(p.wk), t.leaf(p.wv), t.leaf(p.wo), p.heads, p.window};
}

// Context-dependent cost: n^2*d for Q K^T logits plus n^2*d for the weighted
// sum over V. Projection costs are tracked separately by the benchmark.
inline std::uint64_t count_ops_attention(std::uint64_t n, std::uint64_t d, std::uint64_t /*H*/) {
    return 2 * n * n * d;
}

}  // namespace convseq
