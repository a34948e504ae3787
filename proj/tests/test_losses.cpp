#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cgr/objective.hpp"

using namespace cgr;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

double cosine(const double* a, const double* b, std::size_t d) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
}

// Direct double loop over the contrastive formula, without max subtraction.
double brute_force_l_ci(const std::vector<double>& hg, const std::vector<double>& hm, std::size_t b, std::size_t d, double tau, bool standard) {
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double pos = cosine(&hg[i * d], &hm[i * d], d) / tau;
        double denom = standard ? std::exp(pos) : 0.0;
        for (std::size_t k = 0; k < b; ++k)
            if (k != i) denom += std::exp(cosine(&hg[i * d], &hg[k * d], d) / tau);
        total += -(pos - std::log(denom));
    }
    return total / static_cast<double>(b);
}

}  // namespace

TEST(SquaredErrorLosses, Examples) {
    EXPECT_EQ(l_cp(Tensor::vector({1, 2}), Tensor::vector({1, 2})).item(), 0.0);
    EXPECT_DOUBLE_EQ(l_cp(Tensor::vector({0, 0}), Tensor::vector({1, -1})).item(), 1.0);
    EXPECT_EQ(l_sp(Tensor::vector({3}), Tensor::vector({3})).item(), 0.0);
    EXPECT_DOUBLE_EQ(l_sp(Tensor::vector({2}), Tensor::vector({0})).item(), 4.0);
}

TEST(SquaredErrorLosses, MatchDirectSummation) {
    std::mt19937_64 rng(1);
    for (std::size_t b : {5u, 7u}) {
        auto mu = uniform(b, rng), y = uniform(b, rng);
        double acc = 0.0;
        for (std::size_t i = 0; i < b; ++i) acc += (y[i] - mu[i]) * (y[i] - mu[i]);
        acc /= static_cast<double>(b);
        EXPECT_NEAR(l_cp(Tensor::vector(mu), Tensor::vector(y)).item(), acc, 1e-12);
        EXPECT_NEAR(l_sp(Tensor::vector(mu), Tensor::vector(y)).item(), acc, 1e-12);
    }
}

TEST(SquaredErrorLosses, Errors) {
    EXPECT_THROW(l_cp(Tensor::vector({}), Tensor::vector({})), ContractError);
    EXPECT_THROW(l_sp(Tensor::vector({1, 2}), Tensor::vector({1})), ShapeError);
}

TEST(MiProxy, Examples) {
    EXPECT_EQ(mi_cg_proxy(Tensor::zeros({3, 4})).item(), 0.0);
    EXPECT_DOUBLE_EQ(mi_cg_proxy(Tensor::matrix(1, 2, {3, 4})).item(), 12.5);
}

TEST(MiProxy, HalfMeanRowNormSquare) {
    std::mt19937_64 rng(2);
    auto h = uniform(3 * 5, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k < 5; ++k) row += h[i * 5 + k] * h[i * 5 + k];
        acc += 0.5 * row;
    }
    EXPECT_NEAR(mi_cg_proxy(Tensor::matrix(3, 5, h)).item(), acc / 3.0, 1e-12);
}

TEST(MiProxy, NonNegativeAndZeroOnlyAtZero) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        auto h = uniform(8, rng);
        EXPECT_GT(mi_cg_proxy(Tensor::matrix(2, 4, h)).item(), 0.0);
    }
    std::vector<double> one(8, 0.0);
    one[5] = 1e-6;
    EXPECT_GT(mi_cg_proxy(Tensor::matrix(2, 4, one)).item(), 0.0);
}

TEST(Mix, Examples) {
    auto hc = Tensor::matrix(2, 2, {1, 2, 3, 4});
    std::vector<std::size_t> identity{0, 1};
    EXPECT_EQ(mix(hc, Tensor::zeros({2, 2}), identity).values(), hc.values());
    auto hs = Tensor::matrix(2, 2, {9, 9, 0.5, -1});
    std::vector<std::size_t> swap{1, 0};
    auto m = mix(hc, hs, swap);
    EXPECT_EQ(m.at(0, 0), 1.5);
    EXPECT_EQ(m.at(0, 1), 1.0);
}

TEST(Mix, RandomPermutationRowSums) {
    std::mt19937_64 rng(4);
    auto hc = uniform(4 * 3, rng), hs = uniform(4 * 3, rng);
    auto p = random_pairing(4, rng);
    auto m = mix(Tensor::matrix(4, 3, hc), Tensor::matrix(4, 3, hs), p);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(m.at(i, k), hc[i * 3 + k] + hs[p[i] * 3 + k]);
}

TEST(Mix, RejectsNonPermutations) {
    auto h = Tensor::zeros({3, 2});
    EXPECT_THROW(mix(h, h, std::vector<std::size_t>{0, 0, 1}), ValidationError);
    EXPECT_THROW(mix(h, h, std::vector<std::size_t>{0, 1}), ValidationError);
    EXPECT_THROW(mix(h, h, std::vector<std::size_t>{0, 1, 3}), ValidationError);
}

TEST(RandomPairing, IsAPermutationAndSeeded) {
    std::mt19937_64 a(9), b(9);
    for (std::size_t n : {1u, 2u, 10u, 64u}) {
        auto p = random_pairing(n, a);
        EXPECT_NO_THROW(validate_permutation(p, n));
        EXPECT_EQ(p, random_pairing(n, b));
    }
}

TEST(ContrastiveLoss, EqualCosinesGiveZero) {
    // Rows at 60 degrees; mixes chosen so every cosine is 0.5.
    const double s = std::sqrt(3.0) / 2.0;
    auto hg = Tensor::matrix(2, 2, {1, 0, 0.5, s});
    auto hm = Tensor::matrix(2, 2, {0.5, s, 1, 0});
    EXPECT_NEAR(l_ci(hg, hm, 1.0).item(), 0.0, 1e-15);
}

TEST(ContrastiveLoss, AlignedPositivesOrthogonalNegatives) {
    auto hg = Tensor::matrix(2, 2, {1, 0, 0, 2});
    EXPECT_NEAR(l_ci(hg, hg, 1.0).item(), -1.0, 1e-15);
}

TEST(ContrastiveLoss, MatchesBruteForceForSmallBatches) {
    std::mt19937_64 rng(5);
    for (std::size_t b : {2u, 3u, 4u}) {
        for (double tau : {0.5, 1.0, 2.0}) {
            for (bool standard : {false, true}) {
                auto hg = uniform(b * 5, rng), hm = uniform(b * 5, rng);
                double got = l_ci(Tensor::matrix(b, 5, hg), Tensor::matrix(b, 5, hm), tau, standard).item();
                EXPECT_NEAR(got, brute_force_l_ci(hg, hm, b, 5, tau, standard), 1e-10);
            }
        }
    }
}

TEST(ContrastiveLoss, InvariantToPositiveRowRescaling) {
    std::mt19937_64 rng(6);
    auto hg = uniform(4 * 3, rng), hm = uniform(4 * 3, rng);
    double base = l_ci(Tensor::matrix(4, 3, hg), Tensor::matrix(4, 3, hm), 0.7).item();
    for (std::size_t row = 0; row < 4; ++row) {
        auto g2 = hg, m2 = hm;
        for (std::size_t k = 0; k < 3; ++k) {
            g2[row * 3 + k] *= 3.7;
            m2[row * 3 + k] *= 0.01;
        }
        EXPECT_NEAR(l_ci(Tensor::matrix(4, 3, g2), Tensor::matrix(4, 3, hm), 0.7).item(), base, 1e-10);
        EXPECT_NEAR(l_ci(Tensor::matrix(4, 3, hg), Tensor::matrix(4, 3, m2), 0.7).item(), base, 1e-10);
    }
}

TEST(ContrastiveLoss, Errors) {
    auto one = Tensor::matrix(1, 2, {1, 2});
    EXPECT_THROW(l_ci(one, one, 1.0), ContractError);
    auto two = Tensor::matrix(2, 2, {1, 2, 3, 4});
    EXPECT_THROW(l_ci(two, two, 0.0), ContractError);
    EXPECT_THROW(l_ci(Tensor::matrix(2, 2, {0, 0, 1, 1}), two, 1.0), NumericError);
}

TEST(ComposeTotal, ZeroComponentsGiveZero) {
    LossTerms t{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
    auto [total, report] = compose_total(t, LossWeights{});
    EXPECT_EQ(total.item(), 0.0);
    EXPECT_EQ(report.total, 0.0);
}

TEST(ComposeTotal, ZeroWeightsReduceToCausalLoss) {
    LossWeights w;
    w.alpha = w.beta = w.lambda = 0.0;
    LossTerms t{Tensor::scalar(1.25), Tensor::scalar(3.0), Tensor::scalar(2.0), Tensor::scalar(-0.7)};
    auto [total, report] = compose_total(t, w);
    EXPECT_EQ(total.item(), 1.25);
    EXPECT_EQ(report.l_sp, 0.0);
    EXPECT_EQ(report.l_reg, 0.0);
    EXPECT_EQ(report.l_ci, 0.0);
}

TEST(ComposeTotal, HandArithmetic) {
    // (l_cp, l_sp, l_reg, l_ci) = (1.0, 0.2, 0.3, -0.4), all weights 0.5:
    // 1.0 + 0.5 * 0.3 + 0.5 * 0.2 + 0.5 * (-0.4) = 1.05.
    LossWeights w;
    LossTerms t{Tensor::scalar(1.0), Tensor::scalar(0.2), Tensor::scalar(0.3), Tensor::scalar(-0.4)};
    auto [total, report] = compose_total(t, w);
    EXPECT_NEAR(total.item(), 1.05, 1e-12);
    EXPECT_EQ(report.l_cp, 1.0);
    EXPECT_EQ(report.l_sp, 0.2);
    EXPECT_EQ(report.l_reg, 0.3);
    EXPECT_EQ(report.l_ci, -0.4);
    // Without the 1/2 the regulariser counts twice: 1.05 + 0.15.
    w.mi_half = false;
    EXPECT_NEAR(compose_total(t, w).first.item(), 1.2, 1e-12);
    EXPECT_EQ(compose_total(t, w).second.total, compose_total_value(1.0, 0.2, 0.3, -0.4, w));
}

TEST(ComposeTotal, MissingWeightedTermIsAContractError) {
    LossTerms t;
    t.l_cp = Tensor::scalar(1.0);
    EXPECT_THROW(compose_total(t, LossWeights{}), ContractError);
    EXPECT_THROW(compose_total(LossTerms{}, LossWeights{}), ContractError);
}

TEST(LossWeights, Validation) {
    LossWeights w;
    EXPECT_NO_THROW(w.validate());
    w.alpha = -0.1;
    EXPECT_THROW(w.validate(), ValidationError);
    w = LossWeights{};
    w.tau = 0.0;
    EXPECT_THROW(w.validate(), ValidationError);
}

namespace {

Batch small_batch(std::mt19937_64& rng, std::size_t count) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Graph> gs;
    for (std::size_t g = 0; g < count; ++g) {
        Graph gr;
        gr.num_nodes = 4;
        gr.feature_dim = 4;
        for (std::size_t i = 0; i < 16; ++i) gr.x.push_back(u(rng));
        gr.edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}};
        gr.y = 3.0 * u(rng);
        gs.push_back(gr);
    }
    return make_batch(std::span<const Graph>(gs));
}

ModelConfig tiny() {
    ModelConfig c;
    c.gin.hidden_dim = 8;
    c.gin.num_layers = 2;
    return c;
}

}  // namespace

TEST(Objective, ReportMatchesIndependentComposition) {
    std::mt19937_64 rng(7);
    Batch b = small_batch(rng, 5);
    ModelState m = detached(init_model(tiny(), 3));
    auto pairing = random_pairing(5, rng);
    LossWeights w;
    auto r = evaluate_objective(m, b, w, pairing);
    const auto& o = r.output;
    EXPECT_EQ(r.report.l_cp, l_cp(o.mu_c, b.target_tensor()).item());
    EXPECT_EQ(r.report.l_sp, l_sp(o.mu_s, b.target_tensor()).item());
    EXPECT_EQ(r.report.l_reg, mi_cg_proxy(o.h_c).item());
    EXPECT_EQ(r.report.l_ci, l_ci(o.h_g, mix(o.h_c, o.h_s, pairing), 1.0).item());
    EXPECT_NEAR(r.report.total, r.report.l_cp + 0.5 * r.report.l_reg + 0.5 * r.report.l_sp + 0.5 * r.report.l_ci, 1e-12);
    EXPECT_EQ(r.total.item(), r.report.total);
}

TEST(Objective, OriginalGibLimit) {
    // beta = lambda = 0 leaves l_cp + alpha * I(C;G) bound.
    std::mt19937_64 rng(8);
    Batch b = small_batch(rng, 4);
    ModelState m = detached(init_model(tiny(), 4));
    LossWeights w;
    w.beta = 0.0;
    w.lambda = 0.0;
    auto r = evaluate_objective(m, b, w, random_pairing(4, rng));
    double expect = l_cp(r.output.mu_c, b.target_tensor()).item() + 0.5 * mi_cg_proxy(r.output.h_c).item();
    EXPECT_NEAR(r.report.total, expect, 1e-12);
    EXPECT_EQ(r.report.l_sp, 0.0);
    EXPECT_EQ(r.report.l_ci, 0.0);
}
