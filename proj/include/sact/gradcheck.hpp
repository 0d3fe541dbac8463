#pragma once

// Central-finite-difference gradient oracle and whole-model gradient checks.
// The oracle only ever calls the forward function; it never touches the tape,
// so it stays independent of the autodiff path it is used to verify.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sact/tensor.hpp"

namespace sact {

// Central difference (f(x+eps e_i) - f(x-eps e_i)) / 2eps per coordinate.
// f must be deterministic and evaluable at x +- eps.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-5) {
    Tensor probe = x.detach();
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double orig = probe.values()[i];
        probe.values()[i] = orig + eps;
        double fp = f(probe);
        probe.values()[i] = orig - eps;
        double fm = f(probe);
        probe.values()[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return Tensor(x.shape(), std::move(g));
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coords_checked = 0;

    bool pass(double tol = 1e-4) const { return max_rel_error < tol; }
};

// Relative error with a floor so near-zero gradient pairs are compared
// absolutely (FD noise at f64 with eps=1e-5 sits far below the floor).
inline double grad_rel_error(double ad, double fd) {
    double denom = std::max({std::abs(ad), std::abs(fd), 1e-3});
    return std::abs(ad - fd) / denom;
}

// Checks every coordinate of every named parameter against central finite
// differences. loss_fn must rebuild the full forward pass on each call and
// be deterministic; it is run once under a tape for autodiff gradients and
// then 2x per coordinate without one.
inline GradCheckReport check_gradients(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Tensor()>& loss_fn, double eps = 1e-5) {
    std::vector<std::vector<double>> ad_grads;
    {
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
        for (const auto& [name, p] : params) {
            // a parameter the loss never touched has gradient zero; the
            // finite-difference side will confirm that
            ad_grads.push_back(p.has_grad() ? p.grad()
                                            : std::vector<double>(p.numel(), 0.0));
        }
    }
    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;  // shares storage; mutation perturbs the model
        for (std::size_t i = 0; i < p.numel(); ++i) {
            double orig = p.values()[i];
            p.values()[i] = orig + eps;
            double fp = loss_fn().item();
            p.values()[i] = orig - eps;
            double fm = loss_fn().item();
            p.values()[i] = orig;
            double fd = (fp - fm) / (2.0 * eps);
            double err = grad_rel_error(ad_grads[pi][i], fd);
            ++report.coords_checked;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = params[pi].first;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace sact
