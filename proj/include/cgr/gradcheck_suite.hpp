#pragma once

// Randomised finite-difference checks for every differentiable primitive and
// for the composed training objective. Shared by the CLI `gradcheck` command
// and the test suites.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cgr/gradcheck.hpp"
#include "cgr/objective.hpp"

namespace cgr {

struct GradCheckCase {
    ScalarFn fn;
    std::vector<Tensor> params;
};

// Builds one random instance of a check.
using CaseFactory = std::function<GradCheckCase(std::mt19937_64& rng)>;

struct NamedCheck {
    std::string name;
    CaseFactory make;
};

struct CheckReport {
    std::string name;
    std::size_t instances = 0;
    double max_rel_error = 0.0;
    // Largest ||analytic - numeric|| / ||analytic|| over instances; a
    // diagnostic that is insensitive to coordinates with tiny gradients.
    double max_norm_rel_error = 0.0;
    bool passed = false;
};

namespace gradcheck_detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::constant(std::move(shape), std::move(v));
}

inline std::size_t rand_dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts the output with a fixed random weight so every output coordinate
// contributes to the scalar being checked.
inline Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

inline CaseFactory unary_case(std::function<Tensor(const Tensor&)> op, double lo = -2.0, double hi = 2.0) {
    return [op, lo, hi](std::mt19937_64& rng) {
        Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)};
        Tensor x = random_tensor(s, rng, lo, hi);
        Tensor w = random_tensor(op(x).shape(), rng);
        return GradCheckCase{[op, w](const std::vector<Tensor>& p) { return project(op(p[0]), w); }, {x}};
    };
}

inline CaseFactory binary_case(std::function<Tensor(const Tensor&, const Tensor&)> op) {
    return [op](std::mt19937_64& rng) {
        Shape s{rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)};
        Tensor w = random_tensor(s, rng);
        return GradCheckCase{[op, w](const std::vector<Tensor>& p) { return project(op(p[0], p[1]), w); },
                             {random_tensor(s, rng), random_tensor(s, rng)}};
    };
}

inline Index random_segments(std::mt19937_64& rng, std::size_t rows, std::size_t segments) {
    Index idx(rows);
    for (auto& i : idx) i = rand_dim(rng, 0, segments - 1);
    return idx;
}

inline Graph random_graph(std::mt19937_64& rng, std::size_t dim) {
    Graph g;
    g.num_nodes = rand_dim(rng, 3, 6);
    g.feature_dim = dim;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (std::size_t i = 0; i < g.num_nodes * dim; ++i) g.x.push_back(u(rng));
    for (std::size_t i = 1; i < g.num_nodes; ++i) {
        std::size_t j = rand_dim(rng, 0, i - 1);
        g.edges.push_back({i, j});
        g.edges.push_back({j, i});
    }
    g.y = u(rng);
    return g;
}

}  // namespace gradcheck_detail

// Small model used when checking the composed objective.
inline ModelConfig gradcheck_model_config() {
    ModelConfig c;
    c.input_dim = 3;
    c.gin.num_layers = 3;
    c.gin.hidden_dim = 5;
    return c;
}

// Instances whose ReLU inputs come closer than this to zero are redrawn, so
// that a +-step probe cannot straddle a kink.
inline constexpr double kKinkMargin = 1e-3;

// The full objective L = L_GIB + lambda L_CI on a random two-graph batch,
// differentiated with respect to every model parameter.
inline GradCheckCase total_loss_case(std::mt19937_64& rng, const LossWeights& weights = {}) {
    namespace gd = gradcheck_detail;
    const ModelConfig cfg = gradcheck_model_config();
    const std::vector<std::size_t> pairing{1, 0};
    for (;;) {
        std::vector<Graph> graphs{gd::random_graph(rng, cfg.input_dim), gd::random_graph(rng, cfg.input_dim)};
        auto batch = std::make_shared<Batch>(make_batch(std::span<const Graph>(graphs)));
        ModelState init = detached(init_model(cfg, rng()));
        {
            ReluMarginProbe probe;
            evaluate_objective(init, *batch, weights, pairing);
            if (probe.margin() < kKinkMargin) continue;
        }
        std::vector<std::string> names;
        std::vector<Tensor> params;
        for (const auto& [name, t] : init.params) {
            names.push_back(name);
            params.push_back(t);
        }
        auto fn = [cfg, names, batch, pairing, weights](const std::vector<Tensor>& p) {
            ModelState m;
            m.config = cfg;
            for (std::size_t i = 0; i < names.size(); ++i) m.params.emplace(names[i], p[i]);
            return evaluate_objective(m, *batch, weights, pairing).total;
        };
        return {fn, params};
    }
}

inline std::vector<NamedCheck> primitive_checks() {
    namespace gd = gradcheck_detail;
    using gd::random_tensor;
    std::vector<NamedCheck> checks;
    checks.push_back({"add", gd::binary_case([](const Tensor& a, const Tensor& b) { return add(a, b); })});
    checks.push_back({"sub", gd::binary_case([](const Tensor& a, const Tensor& b) { return sub(a, b); })});
    checks.push_back({"elementwise_mul", gd::binary_case([](const Tensor& a, const Tensor& b) { return mul(a, b); })});
    checks.push_back({"scalar_mul", gd::unary_case([](const Tensor& a) { return scale(a, -1.7); })});
    checks.push_back({"relu", gd::unary_case([](const Tensor& a) { return relu(a); })});
    checks.push_back({"sigmoid", gd::unary_case([](const Tensor& a) { return sigmoid(a); })});
    checks.push_back({"exp", gd::unary_case([](const Tensor& a) { return exp(a); })});
    // log needs positive inputs.
    checks.push_back({"log", gd::unary_case([](const Tensor& a) { return log(a); }, 0.1, 2.1)});
    checks.push_back({"square", gd::unary_case([](const Tensor& a) { return square(a); })});
    checks.push_back({"softmax_last_dim", gd::unary_case([](const Tensor& a) { return softmax_last_dim(a); })});
    checks.push_back({"logsumexp_last_dim", gd::unary_case([](const Tensor& a) { return logsumexp_last_dim(a); })});
    checks.push_back({"transpose", gd::unary_case([](const Tensor& a) { return transpose(a); })});
    checks.push_back({"sum", [](std::mt19937_64& rng) {
                          return GradCheckCase{[](const std::vector<Tensor>& p) { return sum(p[0]); }, {random_tensor({3, 2}, rng)}};
                      }});
    checks.push_back({"mean", [](std::mt19937_64& rng) {
                          return GradCheckCase{[](const std::vector<Tensor>& p) { return mean(p[0]); }, {random_tensor({3, 2}, rng)}};
                      }});
    checks.push_back({"l2_norm_squared", [](std::mt19937_64& rng) {
                          return GradCheckCase{[](const std::vector<Tensor>& p) { return l2_norm_squared(p[0]); }, {random_tensor({3, 4}, rng)}};
                      }});
    checks.push_back({"matmul", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), k = gd::rand_dim(rng, 1, 4), m = gd::rand_dim(rng, 1, 4);
                          Tensor w = random_tensor({n, m}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(matmul(p[0], p[1]), w); },
                                               {random_tensor({n, k}, rng), random_tensor({k, m}, rng)}};
                      }});
    checks.push_back({"add_row_vector", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 1, 4);
                          Tensor w = random_tensor({n, c}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(add_row_vector(p[0], p[1]), w); },
                                               {random_tensor({n, c}, rng), random_tensor({c}, rng)}};
                      }});
    checks.push_back({"scale_rows", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 1, 4);
                          Tensor w = random_tensor({n, c}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(scale_rows(p[0], p[1]), w); },
                                               {random_tensor({n, c}, rng), random_tensor({n}, rng)}};
                      }});
    checks.push_back({"concat_last_dim", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), a = gd::rand_dim(rng, 1, 3), b = gd::rand_dim(rng, 1, 3);
                          Tensor w = random_tensor({n, a + b}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(concat_last_dim(p[0], p[1]), w); },
                                               {random_tensor({n, a}, rng), random_tensor({n, b}, rng)}};
                      }});
    checks.push_back({"column", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 1, 4), j = gd::rand_dim(rng, 0, c - 1);
                          Tensor w = random_tensor({n}, rng);
                          return GradCheckCase{[w, j](const std::vector<Tensor>& p) { return gd::project(column(p[0], j), w); }, {random_tensor({n, c}, rng)}};
                      }});
    checks.push_back({"row_gather", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 1, 4), m = gd::rand_dim(rng, 1, 6);
                          Index idx = gd::random_segments(rng, m, n);
                          Tensor w = random_tensor({m, c}, rng);
                          return GradCheckCase{[w, idx](const std::vector<Tensor>& p) { return gd::project(gather_rows(p[0], idx), w); },
                                               {random_tensor({n, c}, rng)}};
                      }});
    checks.push_back({"segment_sum", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 6), c = gd::rand_dim(rng, 1, 4), s = gd::rand_dim(rng, 1, 3);
                          Index seg = gd::random_segments(rng, n, s);
                          Tensor w = random_tensor({s, c}, rng);
                          return GradCheckCase{[w, seg, s](const std::vector<Tensor>& p) { return gd::project(segment_sum(p[0], seg, s), w); },
                                               {random_tensor({n, c}, rng)}};
                      }});
    checks.push_back({"segment_mean", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 6), c = gd::rand_dim(rng, 1, 4), s = gd::rand_dim(rng, 1, 3);
                          Index seg = gd::random_segments(rng, n, s);
                          Tensor w = random_tensor({s, c}, rng);
                          return GradCheckCase{[w, seg, s](const std::vector<Tensor>& p) { return gd::project(segment_mean(p[0], seg, s), w); },
                                               {random_tensor({n, c}, rng)}};
                      }});
    checks.push_back({"reshape", [](std::mt19937_64& rng) {
                          Tensor w = random_tensor({6}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(reshape(p[0], {6}), w); }, {random_tensor({2, 3}, rng)}};
                      }});
    checks.push_back({"off_diagonal", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 2, 4);
                          Tensor w = random_tensor({n, n - 1}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(off_diagonal(p[0]), w); }, {random_tensor({n, n}, rng)}};
                      }});
    checks.push_back({"cosine_similarity", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 2, 4);
                          Tensor w = random_tensor({n}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(cosine_similarity(p[0], p[1]), w); },
                                               {random_tensor({n, c}, rng), random_tensor({n, c}, rng)}};
                      }});
    checks.push_back({"normalize_rows", gd::unary_case([](const Tensor& a) { return normalize_rows(a); })});
    checks.push_back({"pairwise_cosine", [](std::mt19937_64& rng) {
                          std::size_t n = gd::rand_dim(rng, 1, 4), m = gd::rand_dim(rng, 1, 4), c = gd::rand_dim(rng, 2, 4);
                          Tensor w = random_tensor({n, m}, rng);
                          return GradCheckCase{[w](const std::vector<Tensor>& p) { return gd::project(pairwise_cosine(p[0], p[1]), w); },
                                               {random_tensor({n, c}, rng), random_tensor({m, c}, rng)}};
                      }});
    return checks;
}

inline std::vector<NamedCheck> loss_checks() {
    namespace gd = gradcheck_detail;
    using gd::random_tensor;
    std::vector<NamedCheck> checks;
    checks.push_back({"l_cp", [](std::mt19937_64& rng) {
                          Tensor y = random_tensor({5}, rng);
                          return GradCheckCase{[y](const std::vector<Tensor>& p) { return l_cp(p[0], y); }, {random_tensor({5}, rng)}};
                      }});
    checks.push_back({"l_sp", [](std::mt19937_64& rng) {
                          Tensor y = random_tensor({7}, rng);
                          return GradCheckCase{[y](const std::vector<Tensor>& p) { return l_sp(p[0], y); }, {random_tensor({7}, rng)}};
                      }});
    checks.push_back({"mi_cg_proxy", [](std::mt19937_64& rng) {
                          return GradCheckCase{[](const std::vector<Tensor>& p) { return mi_cg_proxy(p[0]); }, {random_tensor({3, 4}, rng)}};
                      }});
    checks.push_back({"mix", [](std::mt19937_64& rng) {
                          std::size_t b = gd::rand_dim(rng, 2, 5);
                          auto pairing = random_pairing(b, rng);
                          Tensor w = random_tensor({b, 3}, rng);
                          return GradCheckCase{[w, pairing](const std::vector<Tensor>& p) { return gd::project(mix(p[0], p[1], pairing), w); },
                                               {random_tensor({b, 3}, rng), random_tensor({b, 3}, rng)}};
                      }});
    checks.push_back({"l_ci", [](std::mt19937_64& rng) {
                          std::size_t b = gd::rand_dim(rng, 2, 6);
                          double tau = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
                          return GradCheckCase{[tau](const std::vector<Tensor>& p) { return l_ci(p[0], p[1], tau); },
                                               {random_tensor({b, 4}, rng), random_tensor({b, 4}, rng)}};
                      }});
    checks.push_back({"total_loss", [](std::mt19937_64& rng) { return total_loss_case(rng); }});
    return checks;
}

inline std::vector<NamedCheck> all_checks() {
    auto checks = primitive_checks();
    auto losses = loss_checks();
    checks.insert(checks.end(), losses.begin(), losses.end());
    return checks;
}

inline CheckReport run_check(const NamedCheck& check, std::size_t instances, std::uint64_t seed, double tolerance = 1e-4, double step = 1e-5) {
    std::mt19937_64 rng(seed);
    CheckReport r;
    r.name = check.name;
    r.instances = instances;
    for (std::size_t i = 0; i < instances; ++i) {
        auto c = check.make(rng);
        auto res = finite_difference_check(c.fn, c.params, step);
        r.max_rel_error = std::max(r.max_rel_error, res.max_rel_error);
        r.max_norm_rel_error = std::max(r.max_norm_rel_error, res.norm_rel_error);
    }
    r.passed = r.max_rel_error <= tolerance;
    return r;
}

inline std::vector<CheckReport> run_checks(const std::vector<NamedCheck>& checks, std::size_t instances, std::uint64_t seed, double tolerance = 1e-4,
                                           double step = 1e-5) {
    std::vector<CheckReport> out;
    out.reserve(checks.size());
    for (std::size_t i = 0; i < checks.size(); ++i) out.push_back(run_check(checks[i], instances, seed + i, tolerance, step));
    return out;
}

}  // namespace cgr
