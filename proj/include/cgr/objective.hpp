#pragma once

#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "cgr/losses.hpp"
#include "cgr/model.hpp"

namespace cgr {

struct ObjectiveResult {
    Tensor total;
    LossReport report;
    DisentangleOutput output;
};

// Full training objective on one batch. Only terms with nonzero weight are
// evaluated. `pairing` picks the confounding partner of each causal row.
inline ObjectiveResult evaluate_objective(const ModelState& m, const Batch& batch, const LossWeights& w, std::span<const std::size_t> pairing) {
    w.validate();
    ObjectiveResult r;
    r.output = forward(m, batch);
    const auto& o = r.output;
    Tensor y = batch.target_tensor();
    LossTerms terms;
    terms.l_cp = l_cp(o.mu_c, y);
    if (w.beta != 0.0) terms.l_sp = l_sp(o.mu_s, y);
    if (w.alpha != 0.0) terms.l_reg = mi_cg_proxy(o.h_c);
    if (w.lambda != 0.0) terms.l_ci = l_ci(o.h_g, mix(o.h_c, o.h_s, pairing), w.tau, w.infonce_standard);
    std::tie(r.total, r.report) = compose_total(terms, w);
    return r;
}

// Uniform random permutation of 0..n-1 (Fisher-Yates).
template <typename Rng>
std::vector<std::size_t> random_pairing(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(p[i - 1], p[pick(rng)]);
    }
    return p;
}

}  // namespace cgr
