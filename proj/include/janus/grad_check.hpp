#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "janus/ops.hpp"
#include "janus/tape.hpp"

namespace janus {

struct GradCheckEntry {
    std::string param;
    long coord = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // one per parameter coordinate
    double max_rel_err = 0;
    GradCheckEntry worst;
};

/// Central-difference check of reverse-mode gradients, meant to run at 64-bit.
/// `build_loss` must construct the full taped forward pass from the current
/// parameter values (via tape.use) and return the scalar loss node; it must be
/// deterministic, which is verified by comparing two forward evaluations.
inline GradCheckReport grad_check(std::vector<Parameter<double>*> params,
                                  const std::function<Var(Tape<double>&)>& build_loss, double h = 1e-5) {
    auto eval = [&]() {
        Tape<double> t;
        return t.val(build_loss(t))[0];
    };
    const double v1 = eval();
    const double v2 = eval();
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw std::runtime_error("grad_check: non-deterministic function (two forward passes disagree)");

    for (Parameter<double>* p : params) p->zero_grad();
    {
        Tape<double> t;
        t.backward(build_loss(t));
    }

    GradCheckReport report;
    for (Parameter<double>* p : params) {
        for (long i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double fp = eval();
            p->value[i] = saved - h;
            const double fm = eval();
            p->value[i] = saved;

            GradCheckEntry e;
            e.param = p->name;
            e.coord = i;
            e.analytic = p->grad[i];
            e.numeric = (fp - fm) / (2 * h);
            e.rel_err = std::fabs(e.analytic - e.numeric) /
                        std::max({1.0, std::fabs(e.analytic), std::fabs(e.numeric)});
            if (e.rel_err > report.max_rel_err) {
                report.max_rel_err = e.rel_err;
                report.worst = e;
            }
            report.entries.push_back(std::move(e));
        }
    }
    return report;
}

}  // namespace janus
