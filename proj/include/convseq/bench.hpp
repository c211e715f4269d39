#pragma once

#include <algorithm>
#include <chrono>
#include <sstream>

#include "convseq/attention.hpp"
#include "convseq/conv.hpp"
#include "convseq/dynamic_conv.hpp"
#include "convseq/train.hpp"

namespace convseq {

struct CostRow {
    std::string mechanism;
    std::size_t n = 0, d = 0, H = 0, k = 0;
    std::uint64_t context_macs = 0;
    std::uint64_t projection_macs = 0;
    double wall_ns_median = 0.0;
    double wall_ns_mad = 0.0;
    std::size_t repeats = 0;
    std::uint64_t seed = 0;
};

struct CostReport {
    std::vector<CostRow> rows;

    // One MAC = one fused multiply-add; softmax/exp work is excluded since
    // both mechanism families use it proportionally to their context terms.
    std::string csv() const {
        std::ostringstream os;
        os << "mechanism,n,d,H,k,context_macs,projection_macs,wall_ns_median,wall_ns_mad,"
              "repeats,seed\n";
        for (const auto& r : rows) {
            char line[256];
            std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%zu,%llu,%llu,%.0f,%.0f,%zu,%llu\n",
                          r.mechanism.c_str(), r.n, r.d, r.H, r.k,
                          (unsigned long long)r.context_macs,
                          (unsigned long long)r.projection_macs, r.wall_ns_median, r.wall_ns_mad,
                          r.repeats, (unsigned long long)r.seed);
            os << line;
        }
        return os.str();
    }
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <class F>
inline std::pair<double, double> time_ns(F&& fn, std::size_t repeats) {
    for (int w = 0; w < 3; ++w) fn();
    std::vector<double> samples(repeats);
    for (auto& s : samples) {
        auto a = std::chrono::steady_clock::now();
        fn();
        auto b = std::chrono::steady_clock::now();
        s = double(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
    }
    double med = median(samples);
    for (auto& s : samples) s = std::abs(s - med);
    return {med, median(samples)};
}

inline Tensor random_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace detail

// Times a single forward pass of each context mechanism (projections are
// excluded and reported analytically) for every n in the sweep.
inline CostReport run_complexity_sweep(const std::vector<std::size_t>& n_list, std::size_t d,
                                       std::size_t H, std::size_t k, std::size_t repeats,
                                       std::uint64_t seed) {
    require(!n_list.empty(), "run_complexity_sweep: empty n list");
    require(std::is_sorted(n_list.begin(), n_list.end()),
            "run_complexity_sweep: n list must be ascending");
    require(repeats >= 11, "run_complexity_sweep: need at least 11 repeats");
    require(d % H == 0, "run_complexity_sweep: H must divide d");
    CostReport report;
    Rng rng(seed);
    std::size_t dk = d / H;
    for (std::size_t n : n_list) {
        // self-attention core on pre-projected Q, K, V
        {
            Tensor q = detail::random_tensor({H, n, dk}, rng);
            Tensor kk = detail::random_tensor({H, n, dk}, rng);
            Tensor v = detail::random_tensor({H, n, dk}, rng);
            Tensor logits({n, n}), ctx({n, dk});
            double inv = 1.0 / std::sqrt(double(dk));
            auto fn = [&] {
                for (std::size_t h = 0; h < H; ++h) {
                    const double* qh = q.data.data() + h * n * dk;
                    const double* kh = kk.data.data() + h * n * dk;
                    const double* vh = v.data.data() + h * n * dk;
                    std::fill(logits.data.begin(), logits.data.end(), 0.0);
                    kernels::gemm_nt(qh, kh, logits.data.data(), n, dk, n);
                    for (double& x : logits.data) x *= inv;
                    kernels::softmax_rows(logits.data.data(), logits.data.data(), n, n);
                    std::fill(ctx.data.begin(), ctx.data.end(), 0.0);
                    kernels::gemm_nn(logits.data.data(), vh, ctx.data.data(), n, n, dk);
                }
            };
            auto [med, mad] = detail::time_ns(fn, repeats);
            report.rows.push_back({"self_attention", n, d, H, k, count_ops_attention(n, d, H),
                                   std::uint64_t(4) * n * d * d, med, mad, repeats, seed});
        }
        // lightconv context: normalized expanded weights, direct loop
        {
            Tensor x = detail::random_tensor({n, d}, rng);
            Tensor w = detail::random_tensor({H, k}, rng);
            kernels::softmax_rows(w.data.data(), w.data.data(), H, k);
            Tensor wexp({d, k});
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t j = 0; j < k; ++j) wexp.at2(c, j) = w.at2(c * H / d, j);
            Tensor out({n, d});
            auto fn = [&] {
                std::fill(out.data.begin(), out.data.end(), 0.0);
                kernels::depthwise_conv_raw(x.data.data(), wexp.data.data(), out.data.data(), 1, n,
                                            d, k, true);
            };
            auto [med, mad] = detail::time_ns(fn, repeats);
            report.rows.push_back({"lightconv", n, d, H, k, count_ops_lightconv(n, d, k),
                                   std::uint64_t(3) * n * d * d, med, mad, repeats, seed});
        }
        // dynamicconv context: kernel prediction + softmax + direct loop
        {
            Tensor x = detail::random_tensor({n, d}, rng);
            Tensor wq = detail::random_tensor({H * k, d}, rng);
            Tensor kern({n, H * k});
            Tensor out({n, d});
            auto fn = [&] {
                std::fill(kern.data.begin(), kern.data.end(), 0.0);
                kernels::gemm_nt(x.data.data(), wq.data.data(), kern.data.data(), n, d, H * k);
                kernels::softmax_rows(kern.data.data(), kern.data.data(), n * H, k);
                std::fill(out.data.begin(), out.data.end(), 0.0);
                kernels::dynamic_depthwise_conv_raw(x.data.data(), kern.data.data(),
                                                    out.data.data(), 1, n, d, H, k, true);
            };
            auto [med, mad] = detail::time_ns(fn, repeats);
            report.rows.push_back({"dynamicconv", n, d, H, k, count_ops_dynamic(n, d, H, k),
                                   std::uint64_t(3) * n * d * d, med, mad, repeats, seed});
        }
    }
    return report;
}

// -- cumulative ablation grid ------------------------------------------------

struct AblationRow {
    std::string variant;
    std::size_t param_count = 0;
    double final_accuracy = 0.0;
    std::string status;  // "ok" or "diverged"
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "variant,param_count,final_accuracy,status\n";
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof line, "%s,%zu,%.6f,%s\n", r.variant.c_str(), r.param_count,
                      r.final_accuracy, r.status.c_str());
        os << line;
    }
    return os.str();
}

// Each variant adds one feature on top of the previous one, starting from a
// non-separable CNN and ending at DynamicConv.
inline std::vector<AblationRow> run_ablation(const TaskSpec& task, std::size_t steps,
                                             std::uint64_t seed) {
    struct Variant {
        std::string name;
        ModelConfig cfg;
    };
    ModelConfig base;
    base.n_enc = 2;
    base.n_dec = 2;
    base.d = 64;
    base.d_ff = 256;
    base.heads = 64;  // unshared until the weight-sharing variant
    base.enc_kernels = {3, 3};
    base.dec_kernels = {3, 3};
    base.use_glu = true;
    base.normalizer = NormalizerKind::none;
    base.src_vocab = task.vocab;
    base.tgt_vocab = task.vocab;

    std::vector<Variant> grid;
    {
        Variant v{"cnn", base};
        v.cfg.mechanism = Mechanism::cnn_nonseparable;
        grid.push_back(v);
    }
    {
        Variant v{"+depthwise", base};
        v.cfg.mechanism = Mechanism::cnn_depthwise;
        grid.push_back(v);
    }
    {
        Variant v = grid.back();
        v.name = "+increasing_kernels";
        v.cfg.enc_kernels = {3, 7};
        v.cfg.dec_kernels = {3, 7};
        grid.push_back(v);
    }
    {
        Variant v = grid.back();
        v.name = "+dropconnect";
        v.cfg.dropconnect_p = 0.1;
        grid.push_back(v);
    }
    {
        Variant v = grid.back();
        v.name = "+weight_sharing";
        v.cfg.heads = 4;
        grid.push_back(v);
    }
    {
        Variant v = grid.back();
        v.name = "+softmax_norm";
        v.cfg.mechanism = Mechanism::lightconv;
        v.cfg.normalizer = NormalizerKind::softmax;
        grid.push_back(v);
    }
    {
        Variant v = grid.back();
        v.name = "+dynamic";
        v.cfg.mechanism = Mechanism::dynamicconv;
        grid.push_back(v);
    }

    std::vector<AblationRow> rows;
    for (auto& variant : grid) {
        SeqModel model(variant.cfg, seed);
        ScheduleSpec sched;
        sched.warmup = std::max<std::size_t>(steps / 10, 1);
        sched.period = steps;
        TrainSettings settings;
        settings.steps = steps;
        settings.seed = seed;
        TrainingReport rep = train(model, task, sched, OptimizerConfig{}, settings);
        rows.push_back({variant.name, model.num_scalars(), rep.final_accuracy,
                        rep.diverged ? "diverged" : "ok"});
    }
    return rows;
}

}  // namespace convseq
