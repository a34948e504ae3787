#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cgr/tensor.hpp"

namespace cgr {

struct GradCheckResult {
    double max_rel_error = 0.0;
    // Location of the worst coordinate.
    std::size_t param = 0;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
    // ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, 1e-8) over all coordinates.
    double norm_rel_error = 0.0;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>& params)>;

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of fn against central differences
// (f(x+h) - f(x-h)) / 2h on every coordinate of every parameter.
inline GradCheckResult finite_difference_check(const ScalarFn& fn, const std::vector<Tensor>& params, double step = 1e-5) {
    if (!(step > 0.0)) throw ContractError("finite_difference_check: step must be positive");

    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(Tensor::parameter(p.shape(), p.values()));
    Tensor loss = fn(leaves);
    if (!std::isfinite(loss.item())) throw NumericError("finite_difference_check: non-finite function value");
    auto analytic = grad(loss, leaves);

    std::vector<Tensor> probe;
    probe.reserve(params.size());
    for (const auto& p : params) probe.push_back(p.detach());

    auto eval = [&](std::size_t which, std::size_t at, double value) {
        auto data = params[which].values();
        data[at] = value;
        probe[which] = Tensor::constant(params[which].shape(), std::move(data));
        double v = fn(probe).item();
        if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite function value");
        return v;
    };

    GradCheckResult result;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].numel(); ++i) {
            const double x = params[p][i];
            const double plus = eval(p, i, x + step);
            const double minus = eval(p, i, x - step);
            const double numeric = (plus - minus) / (2.0 * step);
            const double a = analytic[p][i];
            const double err = relative_error(a, numeric);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            ++result.coordinates;
            if (err > result.max_rel_error || result.coordinates == 1) {
                result.max_rel_error = err;
                result.param = p;
                result.index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
        probe[p] = params[p].detach();
    }
    result.norm_rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    return result;
}

}  // namespace cgr
