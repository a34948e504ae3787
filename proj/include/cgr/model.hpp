#pragma once

// Causal / confounding disentanglement: a front GIN encoder, two soft-mask
// MLPs (nodes and edges), a subgraph GIN shared by the causal and confounding
// branches, and one linear readout per branch.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cgr/gin.hpp"
#include "cgr/graph.hpp"
#include "cgr/tensor.hpp"

namespace cgr {

struct ModelConfig {
    std::size_t input_dim = 4;
    GinConfig gin;

    void validate() const {
        if (input_dim < 1) throw ValidationError("model: input_dim must be >= 1");
        gin.validate();
    }
};

struct ModelState {
    ModelConfig config;
    ParameterMap params;

    const Tensor& param(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("model has no parameter '" + name + "'");
        return it->second;
    }
    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params) n += t.numel();
        return n;
    }
};

namespace param_names {
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kSharedGnn = "shared_gnn";
inline constexpr const char* kMaskNode = "mask_node";
inline constexpr const char* kMaskEdge = "mask_edge";
inline constexpr const char* kReadoutCausal = "readout_c";
inline constexpr const char* kReadoutConfounding = "readout_s";
}  // namespace param_names

inline Linear linear_params(const ModelState& m, const std::string& prefix) {
    return {m.param(prefix + ".weight"), m.param(prefix + ".bias")};
}

inline GinParams gin_params(const ModelState& m, const std::string& prefix) {
    GinParams p;
    p.input = linear_params(m, prefix + ".input");
    for (std::size_t l = 0; l < m.config.gin.num_layers; ++l) {
        const std::string base = prefix + ".layers." + std::to_string(l);
        p.layers.push_back({linear_params(m, base + ".fc1"), linear_params(m, base + ".fc2")});
    }
    return p;
}

struct MaskMlp {
    Linear fc1;
    Linear fc2;  // -> 2 logits
};

inline MaskMlp mask_params(const ModelState& m, const std::string& prefix) {
    return {linear_params(m, prefix + ".fc1"), linear_params(m, prefix + ".fc2")};
}

namespace detail {
inline void add_linear(ParameterMap& params, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    // U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) v = dist(rng);
    std::vector<double> b(out);
    for (auto& v : b) v = dist(rng);
    params.emplace(prefix + ".weight", Tensor::parameter({in, out}, std::move(w)));
    params.emplace(prefix + ".bias", Tensor::parameter({out}, std::move(b)));
}

inline void add_gin(ParameterMap& params, const std::string& prefix, std::size_t input_dim, const GinConfig& cfg, std::mt19937_64& rng) {
    add_linear(params, prefix + ".input", input_dim, cfg.hidden_dim, rng);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::string base = prefix + ".layers." + std::to_string(l);
        add_linear(params, base + ".fc1", cfg.hidden_dim, cfg.hidden_dim, rng);
        add_linear(params, base + ".fc2", cfg.hidden_dim, cfg.hidden_dim, rng);
    }
}
}  // namespace detail

// The encoder and the shared subgraph GIN use the same GinConfig but separate
// parameters. Initialisation order is fixed so a seed fully determines the model.
inline ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    namespace pn = param_names;
    std::mt19937_64 rng(seed);
    ModelState m;
    m.config = config;
    const std::size_t h = config.gin.hidden_dim;
    detail::add_gin(m.params, pn::kEncoder, config.input_dim, config.gin, rng);
    detail::add_linear(m.params, std::string(pn::kMaskNode) + ".fc1", h, h, rng);
    detail::add_linear(m.params, std::string(pn::kMaskNode) + ".fc2", h, 2, rng);
    detail::add_linear(m.params, std::string(pn::kMaskEdge) + ".fc1", 2 * h, h, rng);
    detail::add_linear(m.params, std::string(pn::kMaskEdge) + ".fc2", h, 2, rng);
    detail::add_gin(m.params, pn::kSharedGnn, config.input_dim, config.gin, rng);
    detail::add_linear(m.params, pn::kReadoutCausal, h, 1, rng);
    detail::add_linear(m.params, pn::kReadoutConfounding, h, 1, rng);
    return m;
}

// Same values, no gradient tracking; for inference.
inline ModelState detached(const ModelState& m) {
    ModelState out;
    out.config = m.config;
    for (const auto& [name, t] : m.params) out.params.emplace(name, t.detach());
    return out;
}

// m + m_bar == 1 and e + e_bar == 1 hold by construction (two-way softmax).
struct MaskPair {
    Tensor node;             // [N]
    Tensor node_complement;  // [N]
    Tensor edge;             // [E]
    Tensor edge_complement;  // [E]

    MaskPair swapped() const { return {node_complement, node, edge_complement, edge}; }
};

inline MaskPair compute_masks(const Tensor& node_embeddings, const Index& src, const Index& dst, const MaskMlp& node_mlp, const MaskMlp& edge_mlp) {
    auto two_way = [](const MaskMlp& mlp, const Tensor& in) { return softmax_last_dim(apply(mlp.fc2, relu(apply(mlp.fc1, in)))); };
    Tensor node_probs = two_way(node_mlp, node_embeddings);
    Tensor edge_in = concat_last_dim(gather_rows(node_embeddings, src), gather_rows(node_embeddings, dst));
    Tensor edge_probs = two_way(edge_mlp, edge_in);
    return {column(node_probs, 0), column(node_probs, 1), column(edge_probs, 0), column(edge_probs, 1)};
}

struct DisentangleOutput {
    Tensor h_g;   // [B, hidden] pooled encoder output
    Tensor h_c;   // [B, hidden] causal representation
    Tensor h_s;   // [B, hidden] confounding representation
    Tensor mu_c;  // [B]
    Tensor mu_s;  // [B]
    MaskPair masks;
};

// One pass of the shared subgraph GIN on a masked view of the batch. The
// causal and confounding branches both go through here.
inline Tensor subgraph_representation(const Batch& batch, const GinParams& shared, const GinConfig& cfg, const Tensor& node_mask, const Tensor& edge_mask) {
    Tensor h = encode(batch, shared, cfg.epsilon, edge_mask, node_mask);
    return pool(h, batch.graph_index, batch.num_graphs, cfg.pooling);
}

inline Tensor readout(const Linear& head, const Tensor& reps) { return reshape(apply(head, reps), {reps.dim(0)}); }

inline DisentangleOutput split_and_represent(const Batch& batch, const MaskPair& masks, const GinParams& shared, const Linear& readout_c,
                                             const Linear& readout_s, const Tensor& encoder_node_embeddings, const GinConfig& cfg) {
    DisentangleOutput out;
    out.masks = masks;
    out.h_g = pool(encoder_node_embeddings, batch.graph_index, batch.num_graphs, cfg.pooling);
    out.h_c = subgraph_representation(batch, shared, cfg, masks.node, masks.edge);
    out.h_s = subgraph_representation(batch, shared, cfg, masks.node_complement, masks.edge_complement);
    out.mu_c = readout(readout_c, out.h_c);
    out.mu_s = readout(readout_s, out.h_s);
    return out;
}

inline DisentangleOutput forward(const ModelState& m, const Batch& batch) {
    namespace pn = param_names;
    if (batch.feature_dim != m.config.input_dim) {
        throw ShapeError("model expects " + std::to_string(m.config.input_dim) + " input features, batch has " + std::to_string(batch.feature_dim));
    }
    const auto& cfg = m.config.gin;
    Tensor node_emb = encode(batch, gin_params(m, pn::kEncoder), cfg.epsilon);
    MaskPair masks = compute_masks(node_emb, batch.src, batch.dst, mask_params(m, pn::kMaskNode), mask_params(m, pn::kMaskEdge));
    return split_and_represent(batch, masks, gin_params(m, pn::kSharedGnn), linear_params(m, pn::kReadoutCausal),
                               linear_params(m, pn::kReadoutConfounding), node_emb, cfg);
}

}  // namespace cgr
