#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "cgr/model.hpp"

using namespace cgr;

namespace {

Linear identity_linear(std::size_t n) {
    std::vector<double> w(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
    return {Tensor::constant({n, n}, w), Tensor::zeros({n})};
}

Graph make_graph(std::size_t n, std::size_t d, std::vector<Edge> edges, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Graph g;
    g.num_nodes = n;
    g.feature_dim = d;
    for (std::size_t i = 0; i < n * d; ++i) g.x.push_back(u(rng));
    g.edges = std::move(edges);
    return g;
}

// Relabels nodes: new id of node v is perm[v].
Graph permute(const Graph& g, const std::vector<std::size_t>& perm) {
    Graph out = g;
    for (std::size_t v = 0; v < g.num_nodes; ++v)
        for (std::size_t k = 0; k < g.feature_dim; ++k) out.x[perm[v] * g.feature_dim + k] = g.feature(v, k);
    for (auto& e : out.edges) e = {perm[e.src], perm[e.dst]};
    return out;
}

Batch single(const Graph& g) {
    std::vector<Graph> v{g};
    return make_batch(std::span<const Graph>(v));
}

GinParams random_params(std::size_t input_dim, std::size_t hidden, std::size_t layers, std::uint64_t seed) {
    ModelConfig c;
    c.input_dim = input_dim;
    c.gin.hidden_dim = hidden;
    c.gin.num_layers = layers;
    return gin_params(detached(init_model(c, seed)), param_names::kEncoder);
}

// Dense reference implementation of one linear map.
std::vector<double> ref_linear(const Linear& l, const std::vector<double>& x, std::size_t rows) {
    const std::size_t in = l.weight.dim(0), out = l.weight.dim(1);
    std::vector<double> y(rows * out);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) {
            double acc = l.bias[j];
            for (std::size_t k = 0; k < in; ++k) acc += x[r * in + k] * l.weight.at(k, j);
            y[r * out + j] = acc;
        }
    return y;
}

}  // namespace

TEST(GinConfig, Validation) {
    GinConfig c;
    EXPECT_NO_THROW(c.validate());
    c.num_layers = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = GinConfig{};
    c.hidden_dim = 0;
    EXPECT_THROW(c.validate(), ValidationError);
    EXPECT_EQ(parse_pooling("sum"), Pooling::sum);
    EXPECT_THROW(parse_pooling("max"), ValidationError);
}

TEST(GinEncode, NoEdgesIsPerNodeMlp) {
    std::mt19937_64 rng(1);
    Graph g = make_graph(4, 3, {}, rng);
    auto p = random_params(3, 5, 1, 7);
    auto h = encode(single(g), p, 0.0);
    auto z = ref_linear(p.input, g.x, 4);
    auto a = ref_linear(p.layers[0].fc1, z, 4);
    for (auto& v : a) v = std::max(v, 0.0);
    auto expect = ref_linear(p.layers[0].fc2, a, 4);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(h[i], expect[i], 1e-12);

    std::vector<std::size_t> perm{2, 0, 3, 1};
    auto hp = encode(single(permute(g, perm)), p, 0.0);
    for (std::size_t v = 0; v < 4; ++v)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(hp.at(perm[v], j), h.at(v, j));
}

TEST(GinEncode, ZeroEdgeWeightsMatchNoEdges) {
    std::mt19937_64 rng(2);
    Graph g = make_graph(4, 3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}}, rng);
    Graph bare = g;
    bare.edges.clear();
    auto p = random_params(3, 6, 3, 9);
    auto masked = encode(single(g), p, 0.0, Tensor::zeros({g.edges.size()}));
    auto plain = encode(single(bare), p, 0.0);
    EXPECT_EQ(masked.values(), plain.values());
}

TEST(GinEncode, UnitEdgeWeightsMatchUnweighted) {
    std::mt19937_64 rng(3);
    Graph g = make_graph(5, 2, {{0, 1}, {1, 0}, {3, 4}, {4, 3}, {2, 4}}, rng);
    auto p = random_params(2, 4, 2, 3);
    auto ones_e = Tensor::constant({g.edges.size()}, std::vector<double>(g.edges.size(), 1.0));
    auto ones_n = Tensor::constant({g.num_nodes}, std::vector<double>(g.num_nodes, 1.0));
    EXPECT_EQ(encode(single(g), p, 0.0, ones_e, ones_n).values(), encode(single(g), p, 0.0).values());
}

TEST(GinEncode, PathAggregationByHand) {
    // Identity maps everywhere and non-negative features, so one layer
    // returns exactly (1 + eps) h_i + sum_j w_ji h_j.
    Graph g;
    g.num_nodes = 3;
    g.feature_dim = 2;
    g.x = {1.0, 0.5, 2.0, 0.0, 0.25, 3.0};
    g.edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};
    GinParams p{identity_linear(2), {{identity_linear(2), identity_linear(2)}}};
    const std::vector<double> w{0.5, 1.0, 0.25, 0.75};
    for (double eps : {0.0, 0.3}) {
        auto h = encode(single(g), p, eps, Tensor::vector(w));
        std::vector<double> expect(6);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 2; ++k) expect[i * 2 + k] = (1.0 + eps) * g.feature(i, k);
        for (std::size_t e = 0; e < g.edges.size(); ++e)
            for (std::size_t k = 0; k < 2; ++k) expect[g.edges[e].dst * 2 + k] += w[e] * g.feature(g.edges[e].src, k);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(h[i], expect[i], 1e-14) << "eps " << eps;
    }
}

TEST(GinEncode, NodeWeightsPreScaleFeatures) {
    std::mt19937_64 rng(4);
    Graph g = make_graph(3, 2, {{0, 1}, {1, 2}}, rng);
    auto p = random_params(2, 4, 2, 5);
    std::vector<double> m{0.2, 1.0, 0.6};
    Graph scaled = g;
    for (std::size_t v = 0; v < 3; ++v)
        for (std::size_t k = 0; k < 2; ++k) scaled.x[v * 2 + k] *= m[v];
    auto a = encode(single(g), p, 0.0, std::nullopt, Tensor::vector(m));
    auto b = encode(single(scaled), p, 0.0);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(GinEncode, WeightValidation) {
    std::mt19937_64 rng(5);
    Graph g = make_graph(3, 2, {{0, 1}, {1, 2}}, rng);
    auto p = random_params(2, 4, 1, 5);
    EXPECT_THROW(encode(single(g), p, 0.0, Tensor::vector({0.5, 1.5})), ValidationError);
    EXPECT_THROW(encode(single(g), p, 0.0, Tensor::vector({-0.1, 0.5})), ValidationError);
    EXPECT_THROW(encode(single(g), p, 0.0, std::nullopt, Tensor::vector({0.5, 0.5, 2.0})), ValidationError);
    EXPECT_THROW(encode(single(g), p, 0.0, Tensor::vector({0.5})), ShapeError);
    EXPECT_THROW(encode(single(g), p, 0.0, std::nullopt, Tensor::vector({0.5})), ShapeError);
}

TEST(GinEncode, GradientsReachMaskWeights) {
    std::mt19937_64 rng(6);
    Graph g = make_graph(4, 3, {{0, 1}, {1, 0}, {1, 2}, {2, 3}, {3, 0}}, rng);
    auto p = random_params(3, 5, 2, 8);
    auto ew = Tensor::parameter({5}, {0.3, 0.7, 0.5, 0.9, 0.1});
    auto nw = Tensor::parameter({4}, {0.4, 0.6, 0.8, 0.2});
    Batch b = single(g);
    auto loss = sum(square(pool(encode(b, p, 0.0, ew, nw), b.graph_index, 1, Pooling::mean)));
    auto grads = grad(loss, std::vector<Tensor>{ew, nw});
    for (const auto& t : grads)
        for (double v : t.values()) EXPECT_NE(v, 0.0);
}

TEST(GinPool, Examples) {
    auto emb = Tensor::matrix(2, 2, {1, 3, 3, 5});
    EXPECT_EQ(pool(emb, {0, 0}, 1, Pooling::mean).values(), (std::vector<double>{2, 4}));
    EXPECT_EQ(pool(Tensor::matrix(1, 2, {7, -1}), {0}, 1, Pooling::sum).values(), (std::vector<double>{7, -1}));
    auto two = Tensor::matrix(3, 2, {1, 3, 3, 5, 10, 20});
    EXPECT_EQ(pool(two, {0, 0, 1}, 2, Pooling::mean).values(), (std::vector<double>{2, 4, 10, 20}));
    EXPECT_THROW(pool(two, {0, 0, 2}, 2, Pooling::mean), IndexError);
}

TEST(GinProperties, PooledRepresentationIsPermutationInvariant) {
    std::mt19937_64 rng(12);
    auto p = random_params(3, 8, 3, 13);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 3 + trial % 6;
        std::vector<Edge> edges;
        for (std::size_t i = 1; i < n; ++i) {
            std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
            edges.push_back({i, j});
            edges.push_back({j, i});
        }
        Graph g = make_graph(n, 3, edges, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Graph gp = permute(g, perm);
        Batch a = single(g), b = single(gp);
        auto ha = encode(a, p, 0.0), hb = encode(b, p, 0.0);
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(hb.at(perm[v], j), ha.at(v, j), 1e-10);
        for (auto pooling : {Pooling::mean, Pooling::sum}) {
            auto pa = pool(ha, a.graph_index, 1, pooling), pb = pool(hb, b.graph_index, 1, pooling);
            for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(pa[j], pb[j], 1e-10);
        }
    }
}
