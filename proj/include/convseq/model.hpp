#pragma once

#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "convseq/attention.hpp"
#include "convseq/conv.hpp"
#include "convseq/dynamic_conv.hpp"

namespace convseq {

enum class Mechanism { self_attention, lightconv, dynamicconv, cnn_nonseparable, cnn_depthwise };

inline const char* mechanism_name(Mechanism m) {
    switch (m) {
        case Mechanism::self_attention: return "self_attention";
        case Mechanism::lightconv: return "lightconv";
        case Mechanism::dynamicconv: return "dynamicconv";
        case Mechanism::cnn_nonseparable: return "cnn_nonseparable";
        case Mechanism::cnn_depthwise: return "cnn_depthwise";
    }
    return "?";
}

inline Mechanism mechanism_from_name(const std::string& s) {
    for (int i = 0; i <= int(Mechanism::cnn_depthwise); ++i)
        if (s == mechanism_name(Mechanism(i))) return Mechanism(i);
    throw std::invalid_argument("unknown mechanism: " + s);
}

// Token id convention shared by all synthetic tasks.
struct Vocab {
    static constexpr long long pad = 0;
    static constexpr long long bos = 1;
    static constexpr long long eos = 2;
    static constexpr long long first_payload = 3;
};

using TokenMatrix = std::vector<std::vector<long long>>;

struct ModelConfig {
    Mechanism mechanism = Mechanism::lightconv;
    std::size_t n_enc = 2;
    std::size_t n_dec = 2;
    std::size_t d = 64;
    std::size_t d_ff = 256;
    std::size_t heads = 4;
    std::vector<std::size_t> enc_kernels;       // empty -> default schedule
    std::vector<std::size_t> dec_kernels;
    std::vector<std::size_t> attn_windows_enc;  // empty -> unlimited; 0 entries = unlimited
    std::vector<std::size_t> attn_windows_dec;
    bool use_glu = true;
    double dropconnect_p = 0.0;
    double dropout_p = 0.0;
    NormalizerKind normalizer = NormalizerKind::softmax;
    std::size_t src_vocab = 20;
    std::size_t tgt_vocab = 20;
    std::size_t max_positions = 256;

    // First N entries of (3, 7, 15, 31, 31, ...).
    static std::vector<std::size_t> default_schedule(std::size_t N) {
        static constexpr std::size_t base[] = {3, 7, 15, 31};
        std::vector<std::size_t> s;
        for (std::size_t i = 0; i < N; ++i) s.push_back(base[std::min<std::size_t>(i, 3)]);
        return s;
    }

    void finalize() {
        if (enc_kernels.empty()) enc_kernels = default_schedule(n_enc);
        if (dec_kernels.empty()) dec_kernels = default_schedule(n_dec);
        require(enc_kernels.size() == n_enc, "ModelConfig: enc_kernels length must equal n_enc");
        require(dec_kernels.size() == n_dec, "ModelConfig: dec_kernels length must equal n_dec");
        require(d % heads == 0, "ModelConfig: heads must divide d");
        require(d % 2 == 0, "ModelConfig: d must be even for sinusoidal positions");
        for (std::size_t k : enc_kernels)
            require(k % 2 == 1, "ModelConfig: encoder (centered) kernels must be odd");
        require(attn_windows_enc.empty() || attn_windows_enc.size() == n_enc,
                "ModelConfig: attn_windows_enc length must equal n_enc");
        require(attn_windows_dec.empty() || attn_windows_dec.size() == n_dec,
                "ModelConfig: attn_windows_dec length must equal n_dec");
        require(src_vocab >= 3 && tgt_vocab >= 3,
                "ModelConfig: vocabulary too small for reserved ids");
    }

    bool has_projections() const { return mechanism != Mechanism::cnn_nonseparable; }
    bool is_conv() const { return mechanism != Mechanism::self_attention; }

    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

namespace detail {
inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}
inline std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    return out;
}
}  // namespace detail

inline std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "mechanism=" << mechanism_name(mechanism) << "\n"
       << "n_enc=" << n_enc << "\n"
       << "n_dec=" << n_dec << "\n"
       << "d=" << d << "\n"
       << "d_ff=" << d_ff << "\n"
       << "heads=" << heads << "\n"
       << "enc_kernels=" << detail::join_sizes(enc_kernels) << "\n"
       << "dec_kernels=" << detail::join_sizes(dec_kernels) << "\n"
       << "attn_windows_enc=" << detail::join_sizes(attn_windows_enc) << "\n"
       << "attn_windows_dec=" << detail::join_sizes(attn_windows_dec) << "\n"
       << "use_glu=" << (use_glu ? 1 : 0) << "\n"
       << "dropconnect_p=" << dropconnect_p << "\n"
       << "dropout_p=" << dropout_p << "\n"
       << "normalizer=" << normalizer_name(normalizer) << "\n"
       << "src_vocab=" << src_vocab << "\n"
       << "tgt_vocab=" << tgt_vocab << "\n"
       << "max_positions=" << max_positions << "\n";
    return os.str();
}

inline ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "mechanism") cfg.mechanism = mechanism_from_name(val);
        else if (key == "n_enc") cfg.n_enc = std::stoull(val);
        else if (key == "n_dec") cfg.n_dec = std::stoull(val);
        else if (key == "d") cfg.d = std::stoull(val);
        else if (key == "d_ff") cfg.d_ff = std::stoull(val);
        else if (key == "heads") cfg.heads = std::stoull(val);
        else if (key == "enc_kernels") cfg.enc_kernels = detail::split_sizes(val);
        else if (key == "dec_kernels") cfg.dec_kernels = detail::split_sizes(val);
        else if (key == "attn_windows_enc") cfg.attn_windows_enc = detail::split_sizes(val);
        else if (key == "attn_windows_dec") cfg.attn_windows_dec = detail::split_sizes(val);
        else if (key == "use_glu") cfg.use_glu = val != "0";
        else if (key == "dropconnect_p") cfg.dropconnect_p = std::stod(val);
        else if (key == "dropout_p") cfg.dropout_p = std::stod(val);
        else if (key == "normalizer") cfg.normalizer = normalizer_from_name(val);
        else if (key == "src_vocab") cfg.src_vocab = std::stoull(val);
        else if (key == "tgt_vocab") cfg.tgt_vocab = std::stoull(val);
        else if (key == "max_positions") cfg.max_positions = std::stoull(val);
        else throw std::invalid_argument("unknown config key: " + key);
    }
    cfg.finalize();
    return cfg;
}

// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same).
inline Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
    require(d % 2 == 0, "sinusoidal_positions: d must be even");
    Tensor pe({n, d});
    for (std::size_t pos = 0; pos < n; ++pos)
        for (std::size_t i = 0; i < d / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * double(i) / double(d));
            pe.at2(pos, 2 * i) = std::sin(double(pos) * freq);
            pe.at2(pos, 2 * i + 1) = std::cos(double(pos) * freq);
        }
    return pe;
}

// Encoder-decoder model with a pluggable context mechanism per block.
class SeqModel {
public:
    ModelConfig cfg;

    SeqModel(ModelConfig config, std::uint64_t init_seed) : cfg(std::move(config)) {
        cfg.finalize();
        Rng rng(init_seed);
        build_params(rng);
    }

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }

    Tensor& param(const std::string& name) {
        for (auto& [n, t] : params_)
            if (n == name) return t;
        throw std::invalid_argument("unknown parameter: " + name);
    }
    const Tensor& param(const std::string& name) const {
        return const_cast<SeqModel*>(this)->param(name);
    }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    // Parameter scalars in one context sub-block (mechanism weights only).
    std::size_t context_block_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_)
            if (name.rfind("enc.0.", 0) == 0 &&
                (name.find("attn.") != std::string::npos || name.find("conv.") != std::string::npos))
                n += t.numel();
        return n;
    }

    struct Bound {
        Tape* tape = nullptr;
        std::unordered_map<std::string, Var> vars;
        Var operator[](const std::string& name) const {
            auto it = vars.find(name);
            require(it != vars.end(), "unbound parameter: " + name);
            return it->second;
        }
    };

    Bound bind(Tape& tape) const {
        Bound b;
        b.tape = &tape;
        for (const auto& [name, t] : params_) b.vars.emplace(name, tape.leaf(t));
        return b;
    }

    // Gradients by name after backward(); zeros where nothing flowed.
    std::vector<std::pair<std::string, Tensor>> gradients(Bound& b) const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_)
            out.emplace_back(name, b.tape->grad_or_zeros(b.vars.at(name)));
        return out;
    }

    // -- forward ------------------------------------------------------------

    Var encode(Tape& tape, const Bound& b, const TokenMatrix& src, Rng* rng = nullptr,
               bool training = false) const {
        require(seq_len(src) <= cfg.max_positions, "encode: sequence length exceeds max positions");
        Var x = embed(tape, b, "enc.embed", src, cfg.src_vocab);
        Tensor mul_mask = pad_multiplier(src, cfg.d);
        Var mask_v = tape.constant(mul_mask);
        x = mul(x, mask_v);
        for (std::size_t l = 0; l < cfg.n_enc; ++l)
            x = block_forward(tape, b, x, "enc." + std::to_string(l) + ".", l, /*decoder=*/false,
                              &src, nullptr, nullptr, rng, training);
        return layer_norm(x, b["enc.final_ln.g"], b["enc.final_ln.b"]);
    }

    // Returns vocabulary logits [B, m, V].
    Var decode(Tape& tape, const Bound& b, const TokenMatrix& tgt_in, Var enc_out,
               const TokenMatrix& src, Rng* rng = nullptr, bool training = false) const {
        require(seq_len(tgt_in) <= cfg.max_positions, "decode: sequence length exceeds max positions");
        Var x = embed(tape, b, "dec.embed", tgt_in, cfg.tgt_vocab);
        for (std::size_t l = 0; l < cfg.n_dec; ++l)
            x = block_forward(tape, b, x, "dec." + std::to_string(l) + ".", l, /*decoder=*/true,
                              nullptr, &enc_out, &src, rng, training);
        Var h = layer_norm(x, b["dec.final_ln.g"], b["dec.final_ln.b"]);
        return matmul(h, b["dec.out_w"]);
    }

    // One context + FFN residual block; decoder blocks add
    // the source-target attention sub-block.
    Var block_forward(Tape& tape, const Bound& b, Var x, const std::string& prefix,
                      std::size_t layer, bool decoder, const TokenMatrix* src_for_self_mask,
                      const Var* enc_out, const TokenMatrix* src_for_cross_mask, Rng* rng,
                      bool training) const {
        std::size_t n = x.value().shape[x.value().rank() - 2];
        // context sub-block
        Var h = layer_norm(x, b[prefix + "ln1.g"], b[prefix + "ln1.b"]);
        Var ctx = context_sublayer(tape, b, h, prefix, layer, decoder, src_for_self_mask, rng,
                                   training, n);
        x = add(x, apply_dropout(ctx, rng, training));
        // source-target attention sub-block (decoder only)
        if (decoder) {
            Var hs = layer_norm(x, b[prefix + "ln_src.g"], b[prefix + "ln_src.b"]);
            AttentionVars av{b[prefix + "src_attn.wq"], b[prefix + "src_attn.wk"],
                             b[prefix + "src_attn.wv"], b[prefix + "src_attn.wo"], cfg.heads, 0};
            Tensor mask;
            const Tensor* mp = nullptr;
            if (src_for_cross_mask && has_pad(*src_for_cross_mask)) {
                mask = cross_pad_mask(*src_for_cross_mask, n);
                mp = &mask;
            }
            Var cross = source_target_attention(hs, *enc_out, av, mp);
            x = add(x, apply_dropout(cross, rng, training));
        }
        // feed-forward sub-block
        Var hf = layer_norm(x, b[prefix + "ln2.g"], b[prefix + "ln2.b"]);
        Var ff = matmul(relu(add(matmul(hf, b[prefix + "ffn.w1"]), b[prefix + "ffn.b1"])),
                        b[prefix + "ffn.w2"]);
        ff = add(ff, b[prefix + "ffn.b2"]);
        return add(x, apply_dropout(ff, rng, training));
    }

    ConvConfig conv_config(std::size_t layer, bool decoder) const {
        ConvConfig c;
        c.model_dim = cfg.d;
        c.heads = cfg.heads;
        c.kernel_width = decoder ? cfg.dec_kernels[layer] : cfg.enc_kernels[layer];
        c.padding = decoder ? PaddingMode::causal : PaddingMode::centered;
        c.normalizer.kind = cfg.normalizer;
        c.dropconnect_p = cfg.dropconnect_p;
        return c;
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;

    static std::size_t seq_len(const TokenMatrix& m) {
        require(!m.empty(), "empty batch");
        std::size_t n = m[0].size();
        for (const auto& row : m) require(row.size() == n, "ragged token batch");
        require(n > 0, "empty sequence");
        return n;
    }

    static bool has_pad(const TokenMatrix& m) {
        for (const auto& row : m)
            for (long long t : row)
                if (t == Vocab::pad) return true;
        return false;
    }

    Var apply_dropout(Var v, Rng* rng, bool training) const {
        if (!training || cfg.dropout_p == 0.0 || rng == nullptr) return v;
        return dropout(v, cfg.dropout_p, *rng, training);
    }

    Var embed(Tape& tape, const Bound& b, const std::string& table, const TokenMatrix& toks,
              std::size_t vocab) const {
        std::size_t B = toks.size(), n = seq_len(toks);
        std::vector<long long> flat;
        flat.reserve(B * n);
        for (const auto& row : toks)
            for (long long t : row) {
                require(t >= 0 && std::size_t(t) < vocab,
                        "token id " + std::to_string(t) + " out of range");
                flat.push_back(t);
            }
        Var e = gather_rows(b[table], flat, Vocab::pad);
        e = scale(reshape(e, {B, n, cfg.d}), std::sqrt(double(cfg.d)));
        return add(e, tape.constant(sinusoidal_positions(n, cfg.d)));
    }

    // 1.0 at real positions, 0.0 at pads; shape [B,n,d].
    static Tensor pad_multiplier(const TokenMatrix& toks, std::size_t d) {
        std::size_t B = toks.size(), n = toks[0].size();
        Tensor m({B, n, d});
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t i = 0; i < n; ++i)
                if (toks[bi][i] != Vocab::pad)
                    for (std::size_t c = 0; c < d; ++c) m.at3(bi, i, c) = 1.0;
        return m;
    }

    // Self-attention mask combining geometry (causal/window) with key padding.
    // The diagonal is always allowed so pad query rows stay normalizable.
    Tensor self_mask(const TokenMatrix& toks, std::size_t n, bool causal,
                     std::size_t window) const {
        std::size_t B = toks.size(), H = cfg.heads;
        Tensor geo = build_attention_mask(n, n, causal, window);
        if (!has_pad(toks)) return geo;
        Tensor mask({B, H, n, n});
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    bool ok = geo.at2(i, j) == 0.0 && (i == j || toks[bi][j] != Vocab::pad);
                    double v = ok ? 0.0 : kMaskedLogit;
                    for (std::size_t h = 0; h < H; ++h) mask.at4(bi, h, i, j) = v;
                }
        return mask;
    }

    Tensor cross_pad_mask(const TokenMatrix& src, std::size_t n_q) const {
        std::size_t B = src.size(), n_k = src[0].size(), H = cfg.heads;
        Tensor mask({B, H, n_q, n_k});
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t j = 0; j < n_k; ++j) {
                double v = src[bi][j] != Vocab::pad ? 0.0 : kMaskedLogit;
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t i = 0; i < n_q; ++i) mask.at4(bi, h, i, j) = v;
            }
        return mask;
    }

    Var context_sublayer(Tape& tape, const Bound& b, Var h, const std::string& prefix,
                         std::size_t layer, bool decoder, const TokenMatrix* src_toks, Rng* rng,
                         bool training, std::size_t n) const {
        bool causal = decoder;
        if (cfg.mechanism == Mechanism::self_attention) {
            const auto& windows = decoder ? cfg.attn_windows_dec : cfg.attn_windows_enc;
            std::size_t window = windows.empty() ? 0 : windows[layer];
            AttentionVars av{b[prefix + "attn.wq"], b[prefix + "attn.wk"], b[prefix + "attn.wv"],
                             b[prefix + "attn.wo"], cfg.heads, window};
            Tensor mask = src_toks ? self_mask(*src_toks, n, causal, window)
                                   : build_attention_mask(n, n, causal, window);
            return multi_head_self_attention(h, av, causal, &mask);
        }

        ConvConfig cc = conv_config(layer, decoder);
        Rng dummy(0);
        Rng& r = rng ? *rng : dummy;

        if (cfg.mechanism == Mechanism::cnn_nonseparable) {
            // no input/output projections around the non-separable CNN
            Var hin = mask_pads(tape, h, src_toks);
            return conv_full(hin, b[prefix + "conv.full_w"], causal);
        }

        Var hin;
        if (cfg.use_glu) {
            Var proj = matmul(h, b[prefix + "conv.in_w"]);  // [.., 2d]
            Var lin = slice_last(proj, 0, cfg.d);
            Var gate = slice_last(proj, cfg.d, 2 * cfg.d);
            hin = mul(lin, sigmoid(gate));
        } else {
            hin = matmul(h, b[prefix + "conv.in_w"]);
        }
        hin = mask_pads(tape, hin, src_toks);

        Var conv_out = cfg.mechanism == Mechanism::dynamicconv
                           ? dynamic_conv(hin, b[prefix + "conv.wq"], cc, r, training)
                           : lightconv(hin, b[prefix + "conv.kernel"], cc, r, training);
        return matmul(conv_out, b[prefix + "conv.out_w"]);
    }

    Var mask_pads(Tape& tape, Var v, const TokenMatrix* toks) const {
        if (!toks || !has_pad(*toks)) return v;
        return mul(v, tape.constant(pad_multiplier(*toks, cfg.d)));
    }

    // -- construction -------------------------------------------------------

    Tensor randn(Shape s, Rng& rng, double std_dev) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = rng.normal() * std_dev;
        return t;
    }

    Tensor& add_param(const std::string& name, Tensor t) {
        params_.emplace_back(name, std::move(t));
        return params_.back().second;
    }

    void build_params(Rng& rng) {
        std::size_t d = cfg.d;
        double pstd = 1.0 / std::sqrt(double(d));
        {
            Tensor& e = add_param("enc.embed", randn({cfg.src_vocab, d}, rng, pstd));
            for (std::size_t j = 0; j < d; ++j) e.at2(Vocab::pad, j) = 0.0;
        }
        {
            Tensor& e = add_param("dec.embed", randn({cfg.tgt_vocab, d}, rng, pstd));
            for (std::size_t j = 0; j < d; ++j) e.at2(Vocab::pad, j) = 0.0;
        }
        for (std::size_t l = 0; l < cfg.n_enc; ++l)
            build_block("enc." + std::to_string(l) + ".", cfg.enc_kernels[l], false, rng);
        for (std::size_t l = 0; l < cfg.n_dec; ++l)
            build_block("dec." + std::to_string(l) + ".", cfg.dec_kernels[l], true, rng);
        add_param("enc.final_ln.g", Tensor::full({d}, 1.0));
        add_param("enc.final_ln.b", Tensor({d}));
        add_param("dec.final_ln.g", Tensor::full({d}, 1.0));
        add_param("dec.final_ln.b", Tensor({d}));
        // small output scale keeps the initial prediction near uniform
        add_param("dec.out_w", randn({d, cfg.tgt_vocab}, rng, 0.02));
    }

    void build_block(const std::string& prefix, std::size_t k, bool decoder, Rng& rng) {
        std::size_t d = cfg.d;
        double pstd = 1.0 / std::sqrt(double(d));
        add_param(prefix + "ln1.g", Tensor::full({d}, 1.0));
        add_param(prefix + "ln1.b", Tensor({d}));
        switch (cfg.mechanism) {
            case Mechanism::self_attention:
                add_param(prefix + "attn.wq", randn({d, d}, rng, pstd));
                add_param(prefix + "attn.wk", randn({d, d}, rng, pstd));
                add_param(prefix + "attn.wv", randn({d, d}, rng, pstd));
                add_param(prefix + "attn.wo", randn({d, d}, rng, pstd));
                break;
            case Mechanism::cnn_nonseparable:
                add_param(prefix + "conv.full_w",
                          randn({d, d, k}, rng, 1.0 / std::sqrt(double(d * k))));
                break;
            case Mechanism::lightconv:
            case Mechanism::cnn_depthwise:
                add_param(prefix + "conv.in_w",
                          randn({d, cfg.use_glu ? 2 * d : d}, rng, pstd));
                add_param(prefix + "conv.kernel",
                          randn({cfg.heads, k}, rng, 1.0 / std::sqrt(double(k))));
                add_param(prefix + "conv.out_w", randn({d, d}, rng, pstd));
                break;
            case Mechanism::dynamicconv:
                add_param(prefix + "conv.in_w",
                          randn({d, cfg.use_glu ? 2 * d : d}, rng, pstd));
                add_param(prefix + "conv.wq", randn({cfg.heads, k, d}, rng, pstd));
                add_param(prefix + "conv.out_w", randn({d, d}, rng, pstd));
                break;
        }
        if (decoder) {
            add_param(prefix + "ln_src.g", Tensor::full({d}, 1.0));
            add_param(prefix + "ln_src.b", Tensor({d}));
            add_param(prefix + "src_attn.wq", randn({d, d}, rng, pstd));
            add_param(prefix + "src_attn.wk", randn({d, d}, rng, pstd));
            add_param(prefix + "src_attn.wv", randn({d, d}, rng, pstd));
            add_param(prefix + "src_attn.wo", randn({d, d}, rng, pstd));
        }
        add_param(prefix + "ln2.g", Tensor::full({d}, 1.0));
        add_param(prefix + "ln2.b", Tensor({d}));
        add_param(prefix + "ffn.w1", randn({d, cfg.d_ff}, rng, pstd));
        add_param(prefix + "ffn.b1", Tensor({cfg.d_ff}));
        add_param(prefix + "ffn.w2", randn({cfg.d_ff, d}, rng, 1.0 / std::sqrt(double(cfg.d_ff))));
        add_param(prefix + "ffn.b2", Tensor({d}));
    }
};

// loss = (1-s) * NLL(target) + s * mean_v NLL(v), averaged over non-pad tokens.
inline Var label_smoothed_nll(Var logits, const TokenMatrix& targets, double smoothing,
                              long long pad_id = Vocab::pad) {
    Tape& t = *logits.tape;
    const Tensor& lv = logits.value();
    require(lv.rank() == 3, "label_smoothed_nll: logits must be [B,m,V]");
    require(smoothing >= 0.0 && smoothing < 1.0, "label_smoothed_nll: smoothing must be in [0,1)");
    std::size_t B = lv.shape[0], m = lv.shape[1], V = lv.shape[2];
    require(targets.size() == B && targets[0].size() == m,
            "label_smoothed_nll: target shape mismatch");
    Tensor onehot({B, m, V}), padmask({B, m});
    std::size_t live = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < m; ++i) {
            long long tok = targets[b][i];
            require(tok >= 0 && std::size_t(tok) < V, "label_smoothed_nll: target id out of range");
            if (tok == pad_id) continue;
            onehot.at3(b, i, std::size_t(tok)) = 1.0;
            padmask.at2(b, i) = 1.0;
            ++live;
        }
    require(live > 0, "label_smoothed_nll: all-pad target");
    Var lp = log_softmax(logits, 2);
    Var nll_target = scale(sum_axis(mul(lp, t.constant(onehot)), 2), -1.0);
    Var nll_uniform = scale(sum_axis(lp, 2), -1.0 / double(V));
    Var per_tok = add(scale(nll_target, 1.0 - smoothing), scale(nll_uniform, smoothing));
    Var masked = mul(per_tok, t.constant(padmask));
    return scale(sum(masked), 1.0 / double(live));
}

}  // namespace convseq
