#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "convseq/autodiff.hpp"

namespace convseq {

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::string message;
};

// Compares the analytic gradient of a scalar-valued map against central finite
// differences with step h. Relative error uses denominator max(|a|,|n|,1e-8).
inline GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& theta,
                                  double tolerance, double h = 1e-5) {
    GradCheckReport rep;

    Tensor analytic;
    {
        Tape tape;
        Var p = tape.leaf(theta);
        Var loss = f(tape, p);
        require(loss.value().numel() == 1, "grad_check: f must be scalar-valued");
        tape.backward(loss);
        analytic = tape.grad_or_zeros(p);
    }

    auto eval = [&](const Tensor& t) {
        Tape tape;
        Var p = tape.leaf(t);
        return f(tape, p).value().data[0];
    };

    for (std::size_t i = 0; i < theta.numel(); ++i) {
        Tensor tp = theta, tm = theta;
        tp.data[i] += h;
        tm.data[i] -= h;
        double numeric = (eval(tp) - eval(tm)) / (2.0 * h);
        double a = analytic.data[i];
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
            rep.pass = false;
            rep.max_rel_err = std::numeric_limits<double>::infinity();
            rep.worst_index = i;
            rep.message = "non-finite gradient at coordinate " + std::to_string(i);
            return rep;
        }
        double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
    }
    rep.pass = rep.max_rel_err < tolerance;
    if (!rep.pass && rep.message.empty())
        rep.message = "max relative error " + std::to_string(rep.max_rel_err) + " at coordinate " +
                      std::to_string(rep.worst_index);
    return rep;
}

}  // namespace convseq
