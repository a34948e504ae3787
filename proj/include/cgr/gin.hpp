#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cgr/graph.hpp"
#include "cgr/tensor.hpp"

namespace cgr {

enum class Pooling { mean, sum };

inline std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "sum"; }

inline Pooling parse_pooling(const std::string& s) {
    if (s == "mean") return Pooling::mean;
    if (s == "sum") return Pooling::sum;
    throw ValidationError("unknown pooling '" + s + "'");
}

struct GinConfig {
    std::size_t num_layers = 3;
    std::size_t hidden_dim = 64;
    double epsilon = 0.0;
    Pooling pooling = Pooling::mean;

    void validate() const {
        if (num_layers < 1) throw ValidationError("gin: num_layers must be >= 1");
        if (hidden_dim < 1) throw ValidationError("gin: hidden_dim must be >= 1");
    }
};

// weight is [in, out], applied as x * weight + bias.
struct Linear {
    Tensor weight;
    Tensor bias;
};

inline Tensor apply(const Linear& l, const Tensor& x) { return add_row_vector(matmul(x, l.weight), l.bias); }

struct GinLayer {
    Linear fc1;
    Linear fc2;
};

struct GinParams {
    Linear input;
    std::vector<GinLayer> layers;
};

namespace detail {
inline void check_unit_interval(const char* what, const Tensor& w, std::size_t expected) {
    if (w.rank() != 1 || w.dim(0) != expected) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(expected) + " weights, got shape " + shape_str(w.shape()));
    }
    for (double v : w.values())
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + ": weight " + std::to_string(v) + " outside [0, 1]");
}
}  // namespace detail

// GIN message passing. Each layer computes
//   h_i <- MLP((1 + eps) h_i + sum_{(j -> i)} w_ji h_j)
// after an input projection of the (optionally node-weighted) features.
// Missing weights behave as all ones.
inline Tensor encode(const Batch& batch, const GinParams& params, double epsilon, const std::optional<Tensor>& edge_weights = std::nullopt,
                     const std::optional<Tensor>& node_weights = std::nullopt) {
    if (edge_weights) detail::check_unit_interval("encode edge_weights", *edge_weights, batch.num_edges());
    if (node_weights) detail::check_unit_interval("encode node_weights", *node_weights, batch.num_nodes());

    Tensor x = node_weights ? scale_rows(batch.x, *node_weights) : batch.x;
    Tensor h = apply(params.input, x);
    for (const auto& layer : params.layers) {
        Tensor messages = gather_rows(h, batch.src);
        if (edge_weights) messages = scale_rows(messages, *edge_weights);
        Tensor agg = segment_sum(messages, batch.dst, batch.num_nodes());
        Tensor z = add(epsilon == 0.0 ? h : scale(h, 1.0 + epsilon), agg);
        h = apply(layer.fc2, relu(apply(layer.fc1, z)));
    }
    return h;
}

inline Tensor pool(const Tensor& node_embeddings, const Index& graph_index, std::size_t num_graphs, Pooling pooling) {
    return pooling == Pooling::mean ? segment_mean(node_embeddings, graph_index, num_graphs) : segment_sum(node_embeddings, graph_index, num_graphs);
}

}  // namespace cgr
