#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cgr/tensor.hpp"

namespace cgr {

struct LossWeights {
    double alpha = 0.5;   // I(C;G) bound
    double beta = 0.5;    // confounding prediction
    double lambda = 0.5;  // causal intervention contrast
    double tau = 1.0;     // similarity temperature
    // true: regulariser is 1/2 E||H_c||^2 as-is; false: doubled (E||H_c||^2).
    bool mi_half = true;
    // true: the positive pair is also added to the contrastive denominator.
    bool infonce_standard = false;

    void validate() const {
        if (!(alpha >= 0.0)) throw ValidationError("alpha must be >= 0");
        if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
        if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
        if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
    }
};

struct LossReport {
    double total = 0.0;
    double l_cp = 0.0;
    double l_sp = 0.0;
    double l_reg = 0.0;
    double l_ci = 0.0;

    friend bool operator==(const LossReport&, const LossReport&) = default;
};

namespace detail {
inline Tensor squared_error(const char* what, const Tensor& pred, const Tensor& y) {
    if (pred.rank() != 1 || pred.dim(0) == 0) throw ContractError(std::string(what) + ": empty or non-vector prediction");
    require_same_shape(what, pred, y);
    return mean(square(sub(y, pred)));
}
}  // namespace detail

// (1/B) sum (y_i - mu_c,i)^2 on the causal head.
inline Tensor l_cp(const Tensor& mu_c, const Tensor& y) { return detail::squared_error("l_cp", mu_c, y); }

// Same least-squares form on the confounding head; minimised, so the
// confounder is trained to be predictive.
inline Tensor l_sp(const Tensor& mu_s, const Tensor& y) { return detail::squared_error("l_sp", mu_s, y); }

// (1/B) sum_i 1/2 ||H_c,i||^2: batch estimate of the KL upper bound on I(C;G)
// with p(C|G) = N(H_c, I) and q(C) = N(0, I).
inline Tensor mi_cg_proxy(const Tensor& h_c) {
    detail::require_rank("mi_cg_proxy", h_c, 2);
    if (h_c.dim(0) == 0) throw ContractError("mi_cg_proxy: empty batch");
    return scale(l2_norm_squared(h_c), 0.5 / static_cast<double>(h_c.dim(0)));
}

inline void validate_permutation(std::span<const std::size_t> pairing, std::size_t n) {
    if (pairing.size() != n) throw ValidationError("pairing has " + std::to_string(pairing.size()) + " entries, expected " + std::to_string(n));
    std::vector<bool> seen(n, false);
    for (auto j : pairing) {
        if (j >= n || seen[j]) throw ValidationError("pairing is not a permutation of 0.." + std::to_string(n - 1));
        seen[j] = true;
    }
}

// H_mix[i] = H_c[i] + H_s[pairing[i]].
inline Tensor mix(const Tensor& h_c, const Tensor& h_s, std::span<const std::size_t> pairing) {
    detail::require_rank("mix", h_c, 2);
    detail::require_same_shape("mix", h_c, h_s);
    validate_permutation(pairing, h_c.dim(0));
    return add(h_c, gather_rows(h_s, Index(pairing.begin(), pairing.end())));
}

// Contrastive intervention loss with sim(a, b) = cos(a, b) / tau:
//   -(1/B) sum_i [ sim(H_g,i, H_mix,i) - logsumexp_{k != i} sim(H_g,i, H_g,k) ]
// The positive pair is left out of the denominator unless `standard` is set.
inline Tensor l_ci(const Tensor& h_g, const Tensor& h_mix, double tau, bool standard = false) {
    detail::require_rank("l_ci", h_g, 2);
    detail::require_same_shape("l_ci", h_g, h_mix);
    if (h_g.dim(0) < 2) throw ContractError("l_ci: needs a batch of at least 2 graphs");
    if (!(tau > 0.0)) throw ContractError("l_ci: tau must be positive");
    const std::size_t b = h_g.dim(0);
    const double inv_tau = 1.0 / tau;
    Tensor pos = scale(cosine_similarity(h_g, h_mix), inv_tau);
    Tensor neg = scale(off_diagonal(pairwise_cosine(h_g, h_g)), inv_tau);
    if (standard) neg = concat_last_dim(reshape(pos, {b, 1}), neg);
    return mean(sub(logsumexp_last_dim(neg), pos));
}

// Individual loss terms; a term left undefined was not computed and counts as 0.
struct LossTerms {
    Tensor l_cp;
    Tensor l_sp;
    Tensor l_reg;
    Tensor l_ci;
};

// total = l_cp + alpha * c * l_reg + beta * l_sp + lambda * l_ci, with c = 1
// when mi_half (regulariser is 1/2 E||H_c||^2) and c = 2 otherwise. Every term
// enters with a + sign: minimising total fits both heads, shrinks the I(C;G)
// bound and minimises the contrastive loss. Terms with zero weight are
// skipped and reported as 0.
inline std::pair<Tensor, LossReport> compose_total(const LossTerms& terms, const LossWeights& w) {
    if (!terms.l_cp.defined()) throw ContractError("compose_total: l_cp is required");
    LossReport report;
    report.l_cp = terms.l_cp.item();
    Tensor total = terms.l_cp;
    auto add_term = [&](const Tensor& term, double weight, double& slot, const char* name) {
        if (weight == 0.0) return;
        if (!term.defined()) throw ContractError(std::string("compose_total: ") + name + " has nonzero weight but was not computed");
        slot = term.item();
        total = add(total, scale(term, weight));
    };
    add_term(terms.l_reg, w.alpha * (w.mi_half ? 1.0 : 2.0), report.l_reg, "l_reg");
    add_term(terms.l_sp, w.beta, report.l_sp, "l_sp");
    add_term(terms.l_ci, w.lambda, report.l_ci, "l_ci");
    report.total = total.item();
    return {total, report};
}

// The same composition on plain numbers.
inline double compose_total_value(double l_cp, double l_sp, double l_reg, double l_ci, const LossWeights& w) {
    double total = l_cp;
    if (w.alpha != 0.0) total += w.alpha * (w.mi_half ? 1.0 : 2.0) * l_reg;
    if (w.beta != 0.0) total += w.beta * l_sp;
    if (w.lambda != 0.0) total += w.lambda * l_ci;
    return total;
}

}  // namespace cgr
