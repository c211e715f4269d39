#pragma once

#include <algorithm>
#include <deque>

#include "convseq/checkpoint.hpp"
#include "convseq/model.hpp"

namespace convseq {

// Per-layer rolling state for single-sequence decoding: the last k conv
// inputs, the growing self-attention K/V cache and the precomputed source
// projections.
struct DecoderState {
    const SeqModel* model = nullptr;
    Tensor enc_out;  // [n_src, d]
    std::size_t n_src = 0;
    struct Layer {
        std::deque<Tensor> conv_inputs;  // each [d], newest last, at most k entries
        Tensor self_k, self_v;           // [t, d]
        Tensor src_k, src_v;             // [n_src, d]
    };
    std::vector<Layer> layers;
    std::size_t pos = 0;
};

inline DecoderState init_decoder_state(const SeqModel& model, const std::vector<long long>& src) {
    DecoderState st;
    st.model = &model;
    st.n_src = src.size();
    Tape tape;
    auto bound = model.bind(tape);
    Tensor enc = model.encode(tape, bound, {src}).value();  // [1, n, d]
    st.enc_out = Tensor({st.n_src, model.cfg.d}, enc.data);
    st.layers.resize(model.cfg.n_dec);
    for (std::size_t l = 0; l < model.cfg.n_dec; ++l) {
        std::string prefix = "dec." + std::to_string(l) + ".";
        Tape t;
        Var eo = t.constant(st.enc_out);
        st.layers[l].src_k = matmul(eo, t.constant(model.param(prefix + "src_attn.wk"))).value();
        st.layers[l].src_v = matmul(eo, t.constant(model.param(prefix + "src_attn.wv"))).value();
    }
    return st;
}

namespace detail {

// Single-query attention over cached keys/values, one head at a time.
// `limit` restricts to the trailing `limit` cache rows (0 = all).
inline Tensor attend_cached(const Tensor& q, const Tensor& K, const Tensor& V, std::size_t H,
                            std::size_t limit = 0) {
    std::size_t d = q.numel(), t = K.shape[0], dk = d / H;
    std::size_t first = (limit > 0 && t > limit) ? t - limit : 0;
    Tensor ctx({d});
    double inv = 1.0 / std::sqrt(double(dk));
    std::vector<double> logits(t);
    for (std::size_t h = 0; h < H; ++h) {
        std::size_t off = h * dk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = first; j < t; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < dk; ++a) s += q.data[off + a] * K.at2(j, off + a);
            logits[j] = s * inv;
            mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = first; j < t; ++j) {
            logits[j] = std::exp(logits[j] - mx);
            z += logits[j];
        }
        for (std::size_t j = first; j < t; ++j) {
            double w = logits[j] / z;
            for (std::size_t a = 0; a < dk; ++a) ctx.data[off + a] += w * V.at2(j, off + a);
        }
    }
    return ctx;
}

inline void append_row(Tensor& cache, const Tensor& row) {
    std::size_t d = row.numel();
    if (cache.data.empty()) {
        cache = Tensor({1, d}, row.data);
        return;
    }
    cache.shape[0] += 1;
    cache.data.insert(cache.data.end(), row.data.begin(), row.data.end());
}

}  // namespace detail

// Advance the decoder by one target token; returns vocabulary logits [V].
inline Tensor decoder_step(DecoderState& st, long long token) {
    const SeqModel& m = *st.model;
    const ModelConfig& cfg = m.cfg;
    Tape t;
    auto P = [&](const std::string& name) { return t.constant(m.param(name)); };

    Var x = gather_rows(P("dec.embed"), {token});
    x = scale(x, std::sqrt(double(cfg.d)));
    Tensor pe = sinusoidal_positions(st.pos + 1, cfg.d);
    Tensor pe_row({1, cfg.d});
    for (std::size_t c = 0; c < cfg.d; ++c) pe_row.at2(0, c) = pe.at2(st.pos, c);
    x = add(x, t.constant(pe_row));

    for (std::size_t l = 0; l < cfg.n_dec; ++l) {
        std::string prefix = "dec." + std::to_string(l) + ".";
        DecoderState::Layer& ly = st.layers[l];
        std::size_t k = cfg.dec_kernels[l];
        Var h = layer_norm(x, P(prefix + "ln1.g"), P(prefix + "ln1.b"));
        Var ctx{&t, 0};

        if (cfg.mechanism == Mechanism::self_attention) {
            Tensor q = matmul(h, P(prefix + "attn.wq")).value();
            detail::append_row(ly.self_k, matmul(h, P(prefix + "attn.wk")).value());
            detail::append_row(ly.self_v, matmul(h, P(prefix + "attn.wv")).value());
            std::size_t window = cfg.attn_windows_dec.empty() ? 0 : cfg.attn_windows_dec[l];
            Tensor q1({cfg.d}, q.data);
            Tensor c1 = detail::attend_cached(q1, ly.self_k, ly.self_v, cfg.heads, window);
            ctx = matmul(t.constant(Tensor({1, cfg.d}, c1.data)), P(prefix + "attn.wo"));
        } else {
            Var ci{&t, 0};
            if (cfg.mechanism == Mechanism::cnn_nonseparable) {
                ci = h;
            } else if (cfg.use_glu) {
                Var proj = matmul(h, P(prefix + "conv.in_w"));
                ci = mul(slice_last(proj, 0, cfg.d), sigmoid(slice_last(proj, cfg.d, 2 * cfg.d)));
            } else {
                ci = matmul(h, P(prefix + "conv.in_w"));
            }
            ly.conv_inputs.push_back(Tensor({cfg.d}, ci.value().data));
            if (ly.conv_inputs.size() > k) ly.conv_inputs.pop_front();
            Tensor win({k, cfg.d});
            std::size_t have = ly.conv_inputs.size();
            for (std::size_t a = 0; a < have; ++a)
                for (std::size_t c = 0; c < cfg.d; ++c)
                    win.at2(k - have + a, c) = ly.conv_inputs[a].data[c];
            Var winv = t.constant(win);
            ConvConfig cc = m.conv_config(l, /*decoder=*/true);
            Var y{&t, 0};
            Rng r(0);
            if (cfg.mechanism == Mechanism::cnn_nonseparable) {
                y = conv_full(winv, P(prefix + "conv.full_w"), true);
            } else if (cfg.mechanism == Mechanism::dynamicconv) {
                Var kern = normalize_kernel(predict_kernels(ci, P(prefix + "conv.wq")),
                                            cc.normalizer);
                // only the last kernel row is read by the last output position
                Tensor kf({k, cfg.heads, cc.kernel_width});
                const Tensor& kv = kern.value();
                for (std::size_t hh = 0; hh < cfg.heads; ++hh)
                    for (std::size_t j = 0; j < cc.kernel_width; ++j)
                        kf.at3(k - 1, hh, j) = kv.at3(0, hh, j);
                y = dynamic_depthwise_conv(winv, t.constant(kf), true);
            } else {
                y = lightconv(winv, P(prefix + "conv.kernel"), cc, r, false);
            }
            Var last = t.constant(Tensor(
                {1, cfg.d}, std::vector<double>(y.value().data.end() - std::ptrdiff_t(cfg.d),
                                                y.value().data.end())));
            ctx = cfg.mechanism == Mechanism::cnn_nonseparable
                      ? last
                      : matmul(last, P(prefix + "conv.out_w"));
        }
        x = add(x, ctx);

        Var hs = layer_norm(x, P(prefix + "ln_src.g"), P(prefix + "ln_src.b"));
        Tensor q = matmul(hs, P(prefix + "src_attn.wq")).value();
        Tensor c1 = detail::attend_cached(Tensor({cfg.d}, q.data), ly.src_k, ly.src_v, cfg.heads);
        Var cross = matmul(t.constant(Tensor({1, cfg.d}, c1.data)), P(prefix + "src_attn.wo"));
        x = add(x, cross);

        Var hf = layer_norm(x, P(prefix + "ln2.g"), P(prefix + "ln2.b"));
        Var ff = matmul(relu(add(matmul(hf, P(prefix + "ffn.w1")), P(prefix + "ffn.b1"))),
                        P(prefix + "ffn.w2"));
        x = add(x, add(ff, P(prefix + "ffn.b2")));
    }
    Var hfin = layer_norm(x, P("dec.final_ln.g"), P("dec.final_ln.b"));
    Tensor logits = matmul(hfin, P("dec.out_w")).value();
    st.pos += 1;
    return Tensor({cfg.tgt_vocab}, logits.data);
}

inline double length_penalty(std::size_t length, double alpha) {
    return std::pow((5.0 + double(length)) / 6.0, alpha);
}

// Greedy decoding; returns generated ids (eos included when emitted, bos not).
inline std::vector<long long> greedy_decode(const SeqModel& model,
                                            const std::vector<long long>& src,
                                            std::size_t max_len) {
    DecoderState st = init_decoder_state(model, src);
    std::vector<long long> out;
    long long token = Vocab::bos;
    for (std::size_t step = 0; step < max_len; ++step) {
        Tensor logits = decoder_step(st, token);
        long long best = 0;
        for (std::size_t v = 1; v < logits.numel(); ++v)
            if (logits.data[v] > logits.data[std::size_t(best)]) best = (long long)v;
        out.push_back(best);
        if (best == Vocab::eos) break;
        token = best;
    }
    return out;
}

struct BeamHypothesis {
    std::vector<long long> tokens;  // generated ids, bos excluded
    double log_prob = 0.0;
    double score = 0.0;  // log_prob / length_penalty once finished
    DecoderState state;
    bool finished = false;
};

// Standard length-normalized beam search; beam_size 1 matches greedy_decode.
inline std::vector<long long> beam_decode(const SeqModel& model, const std::vector<long long>& src,
                                          std::size_t beam_size, std::size_t max_len,
                                          double alpha = 1.0) {
    require(beam_size > 0, "beam_decode: beam size must be positive");
    std::vector<BeamHypothesis> live(1), finished;
    live[0].state = init_decoder_state(model, src);

    for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
        struct Cand {
            std::size_t hyp;
            long long token;
            double log_prob;
        };
        std::vector<Cand> cands;
        for (std::size_t i = 0; i < live.size(); ++i) {
            long long prev = live[i].tokens.empty() ? Vocab::bos : live[i].tokens.back();
            Tensor logits = decoder_step(live[i].state, prev);
            // log-softmax over the vocabulary
            double mx = *std::max_element(logits.data.begin(), logits.data.end());
            double z = 0.0;
            for (double v : logits.data) z += std::exp(v - mx);
            double lz = std::log(z) + mx;
            for (std::size_t v = 0; v < logits.numel(); ++v)
                cands.push_back({i, (long long)v, live[i].log_prob + logits.data[v] - lz});
        }
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Cand& a, const Cand& b) { return a.log_prob > b.log_prob; });
        std::vector<BeamHypothesis> next;
        std::size_t taken = 0;
        for (const Cand& c : cands) {
            if (next.size() >= beam_size || taken >= 2 * beam_size) break;
            ++taken;
            BeamHypothesis h = live[c.hyp];
            h.tokens.push_back(c.token);
            h.log_prob = c.log_prob;
            if (c.token == Vocab::eos || h.tokens.size() == max_len) {
                h.finished = true;
                h.score = h.log_prob / length_penalty(h.tokens.size(), alpha);
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }
    for (BeamHypothesis& h : live) {
        h.score = h.log_prob / length_penalty(h.tokens.size(), alpha);
        finished.push_back(std::move(h));
    }
    require(!finished.empty(), "beam_decode: no hypotheses produced");
    std::stable_sort(finished.begin(), finished.end(),
                     [](const BeamHypothesis& a, const BeamHypothesis& b) {
                         return a.score > b.score;
                     });
    return finished[0].tokens;
}

}  // namespace convseq
