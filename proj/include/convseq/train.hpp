#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "convseq/decode.hpp"
#include "convseq/model.hpp"

namespace convseq {

// -- synthetic tasks ---------------------------------------------------------

enum class TaskKind { copy, reverse, sort };

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::sort: return "sort";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& s) {
    for (int i = 0; i <= int(TaskKind::sort); ++i)
        if (s == task_name(TaskKind(i))) return TaskKind(i);
    throw std::invalid_argument("unknown task: " + s);
}

struct TaskSpec {
    TaskKind kind = TaskKind::copy;
    std::size_t vocab = 20;
    std::size_t min_len = 4;
    std::size_t max_len = 16;
    std::size_t samples_per_epoch = 4096;
    std::uint64_t seed = 1;
};

struct Example {
    std::vector<long long> src, tgt;
};

inline std::vector<long long> task_target(TaskKind kind, std::vector<long long> src) {
    if (kind == TaskKind::reverse) std::reverse(src.begin(), src.end());
    if (kind == TaskKind::sort) std::sort(src.begin(), src.end());
    return src;
}

inline Example sample_example(const TaskSpec& task, Rng& rng) {
    require(task.vocab > std::size_t(Vocab::first_payload), "TaskSpec: vocab too small");
    require(task.min_len >= 1 && task.min_len <= task.max_len, "TaskSpec: bad length range");
    std::size_t n = std::size_t(rng.uniform_int(task.min_len, task.max_len));
    Example ex;
    ex.src.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        ex.src.push_back(
            (long long)(rng.uniform_int(std::uint64_t(Vocab::first_payload), task.vocab - 1)));
    ex.tgt = task_target(task.kind, ex.src);
    return ex;
}

struct Batch {
    TokenMatrix src, tgt;  // padded to the batch max length
};

inline Batch generate_batch(const TaskSpec& task, Rng& rng, std::size_t batch_size) {
    std::vector<Example> ex(batch_size);
    std::size_t n = 0;
    for (auto& e : ex) {
        e = sample_example(task, rng);
        n = std::max(n, e.src.size());
    }
    Batch b;
    for (auto& e : ex) {
        e.src.resize(n, Vocab::pad);
        e.tgt.resize(n, Vocab::pad);
        b.src.push_back(std::move(e.src));
        b.tgt.push_back(std::move(e.tgt));
    }
    return b;
}

// bos-shifted decoder input and eos-terminated target, padded to len+1.
inline void shift_targets(const TokenMatrix& tgt, TokenMatrix& tgt_in, TokenMatrix& tgt_out) {
    tgt_in.clear();
    tgt_out.clear();
    for (const auto& row : tgt) {
        std::size_t len = row.size();
        while (len > 0 && row[len - 1] == Vocab::pad) --len;
        std::vector<long long> in{Vocab::bos}, out;
        in.insert(in.end(), row.begin(), row.begin() + std::ptrdiff_t(len));
        out.assign(row.begin(), row.begin() + std::ptrdiff_t(len));
        out.push_back(Vocab::eos);
        in.resize(row.size() + 1, Vocab::pad);
        out.resize(row.size() + 1, Vocab::pad);
        tgt_in.push_back(std::move(in));
        tgt_out.push_back(std::move(out));
    }
}

// -- learning-rate schedules -------------------------------------------------

enum class ScheduleKind { cosine_warmup, inverse_sqrt };

inline const char* schedule_name(ScheduleKind k) {
    return k == ScheduleKind::cosine_warmup ? "cosine_warmup" : "inverse_sqrt";
}

inline ScheduleKind schedule_from_name(const std::string& s) {
    if (s == "cosine_warmup") return ScheduleKind::cosine_warmup;
    if (s == "inverse_sqrt") return ScheduleKind::inverse_sqrt;
    throw std::invalid_argument("unknown schedule: " + s);
}

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::cosine_warmup;
    double lr_min = 1e-7;
    double lr_max = 1e-3;
    std::size_t warmup = 10000;
    std::size_t period = 20000;
};

inline double lr_at(const ScheduleSpec& s, std::size_t step) {
    if (s.kind == ScheduleKind::inverse_sqrt) {
        // the step index is clamped to 1 so the rate stays positive
        double t = double(std::max<std::size_t>(step, 1));
        double w = double(std::max<std::size_t>(s.warmup, 1));
        return s.lr_max * std::min(t / w, std::sqrt(w / t));
    }
    if (step <= s.warmup) {
        double t = double(step) / double(std::max<std::size_t>(s.warmup, 1));
        return s.lr_min * (1.0 - t) + s.lr_max * t;  // hits both endpoints exactly
    }
    double progress = std::min(1.0, double(step - s.warmup) / double(std::max<std::size_t>(s.period, 1)));
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

// -- optimizers --------------------------------------------------------------

enum class OptimizerKind { adam, nesterov_sgd };

inline const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "nesterov_sgd";
}

inline OptimizerKind optimizer_from_name(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "nesterov_sgd") return OptimizerKind::nesterov_sgd;
    throw std::invalid_argument("unknown optimizer: " + s);
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double momentum = 0.99;
    double clip_norm = 0.1;  // 0 disables clipping
};

struct OptimizerState {
    OptimizerConfig cfg;
    std::size_t step = 0;
    std::vector<Tensor> m, v;  // Adam moments / Nesterov velocity (m only)

    static OptimizerState init(const OptimizerConfig& cfg,
                               const std::vector<std::pair<std::string, Tensor>>& params) {
        OptimizerState st;
        st.cfg = cfg;
        for (const auto& [name, t] : params) {
            st.m.emplace_back(t.shape);
            st.v.emplace_back(t.shape);
        }
        return st;
    }
};

// Clips the global norm, then applies one Adam or Nesterov momentum update.
inline double optimizer_step(std::vector<std::pair<std::string, Tensor>>& params,
                             std::vector<std::pair<std::string, Tensor>>& grads,
                             OptimizerState& st, double lr) {
    require(params.size() == grads.size() && params.size() == st.m.size(),
            "optimizer_step: parameter/gradient count mismatch");
    double sq = 0.0;
    for (auto& [name, g] : grads) {
        if (!g.all_finite()) throw std::runtime_error("non-finite gradient in " + name);
        for (double v : g.data) sq += v * v;
    }
    double norm = std::sqrt(sq);
    double scale = (st.cfg.clip_norm > 0.0 && norm > st.cfg.clip_norm)
                       ? st.cfg.clip_norm / norm
                       : 1.0;
    st.step += 1;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& theta = params[p].second;
        Tensor& g = grads[p].second;
        require(theta.same_shape(g), "optimizer_step: gradient shape mismatch for " + params[p].first);
        if (st.cfg.kind == OptimizerKind::adam) {
            double c1 = 1.0 - std::pow(st.cfg.beta1, double(st.step));
            double c2 = 1.0 - std::pow(st.cfg.beta2, double(st.step));
            for (std::size_t i = 0; i < theta.data.size(); ++i) {
                double gi = g.data[i] * scale;
                double& mi = st.m[p].data[i];
                double& vi = st.v[p].data[i];
                mi = st.cfg.beta1 * mi + (1.0 - st.cfg.beta1) * gi;
                vi = st.cfg.beta2 * vi + (1.0 - st.cfg.beta2) * gi * gi;
                theta.data[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + st.cfg.eps);
            }
        } else {
            for (std::size_t i = 0; i < theta.data.size(); ++i) {
                double gi = g.data[i] * scale;
                double& bi = st.m[p].data[i];
                bi = st.cfg.momentum * bi + gi;
                theta.data[i] -= lr * (gi + st.cfg.momentum * bi);
            }
        }
    }
    return norm;
}

// -- training loop -----------------------------------------------------------

struct TrainSettings {
    std::size_t steps = 5000;
    std::size_t batch_size = 16;
    std::size_t eval_interval = 250;
    std::size_t eval_samples = 32;
    double label_smoothing = 0.1;
    std::size_t grad_accum = 1;
    double target_accuracy = 0.0;  // 0 = run the full budget
    std::uint64_t seed = 1;
};

struct TrainingReport {
    struct Entry {
        std::size_t step;
        double lr, loss, accuracy;
    };
    std::vector<Entry> log;
    bool diverged = false;
    std::size_t diverged_step = 0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    std::size_t steps_run = 0;
    double wall_seconds = 0.0;

    std::string log_text() const {
        std::ostringstream os;
        os << "step,lr,loss,token_accuracy\n";
        char line[128];
        for (const auto& e : log) {
            std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.6f\n", e.step, e.lr, e.loss,
                          e.accuracy);
            os << line;
        }
        if (diverged) os << "# diverged at step " << diverged_step << "\n";
        return os.str();
    }
};

inline double evaluate_accuracy(const SeqModel& model, const TaskSpec& task, Rng eval_rng,
                                std::size_t samples) {
    std::size_t correct = 0, total = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        Example ex = sample_example(task, eval_rng);
        std::vector<long long> ref = ex.tgt;
        ref.push_back(Vocab::eos);
        std::vector<long long> pred = greedy_decode(model, ex.src, ref.size() + 2);
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i < pred.size() && pred[i] == ref[i]) ++correct;
        total += ref.size();
    }
    return double(correct) / double(total);
}

inline TrainingReport train(SeqModel& model, const TaskSpec& task, const ScheduleSpec& schedule,
                            const OptimizerConfig& opt_cfg, const TrainSettings& settings) {
    auto t0 = std::chrono::steady_clock::now();
    TrainingReport report;
    Rng root(settings.seed);
    Rng batch_rng = root.stream(1);
    Rng dropout_rng = root.stream(3);
    OptimizerState opt = OptimizerState::init(opt_cfg, model.params());

    auto eval_now = [&](std::size_t step, double loss) {
        double acc = evaluate_accuracy(model, task, root.stream(2), settings.eval_samples);
        report.log.push_back({step, lr_at(schedule, step), loss, acc});
        report.final_loss = loss;
        report.final_accuracy = acc;
        return acc;
    };

    auto batch_loss = [&](const Batch& b, bool training, Tape& tape, SeqModel::Bound& bound) {
        TokenMatrix tgt_in, tgt_out;
        shift_targets(b.tgt, tgt_in, tgt_out);
        Var enc = model.encode(tape, bound, b.src, &dropout_rng, training);
        Var logits = model.decode(tape, bound, tgt_in, enc, b.src, &dropout_rng, training);
        return label_smoothed_nll(logits, tgt_out, settings.label_smoothing);
    };

    {
        // initial quality before any update
        Rng peek = root.stream(1);
        Batch b = generate_batch(task, peek, settings.batch_size);
        Tape tape;
        auto bound = model.bind(tape);
        double loss = batch_loss(b, false, tape, bound).value().data[0];
        eval_now(0, loss);
    }

    for (std::size_t step = 1; step <= settings.steps; ++step) {
        double lr = lr_at(schedule, step);
        double loss_val = 0.0;
        std::vector<std::pair<std::string, Tensor>> grads;
        bool bad = false;
        for (std::size_t acc = 0; acc < std::max<std::size_t>(settings.grad_accum, 1); ++acc) {
            Batch b = generate_batch(task, batch_rng, settings.batch_size);
            Tape tape;
            auto bound = model.bind(tape);
            Var loss = batch_loss(b, true, tape, bound);
            loss_val += loss.value().data[0];
            if (!std::isfinite(loss.value().data[0])) {
                bad = true;
                break;
            }
            tape.backward(loss);
            auto g = model.gradients(bound);
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (std::size_t i = 0; i < grads.size(); ++i)
                    for (std::size_t j = 0; j < grads[i].second.data.size(); ++j)
                        grads[i].second.data[j] += g[i].second.data[j];
            }
        }
        std::size_t accum = std::max<std::size_t>(settings.grad_accum, 1);
        loss_val /= double(accum);
        if (accum > 1 && !grads.empty())
            for (auto& [name, g] : grads)
                for (double& v : g.data) v /= double(accum);
        report.steps_run = step;
        if (bad) {
            report.diverged = true;
            report.diverged_step = step;
            break;
        }
        try {
            optimizer_step(model.params(), grads, opt, lr);
        } catch (const std::runtime_error&) {
            report.diverged = true;
            report.diverged_step = step;
            break;
        }
        if (step % settings.eval_interval == 0 || step == settings.steps) {
            double acc = eval_now(step, loss_val);
            if (settings.target_accuracy > 0.0 && acc >= settings.target_accuracy) break;
        }
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace convseq
