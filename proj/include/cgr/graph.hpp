#pragma once

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cgr/errors.hpp"
#include "cgr/tensor.hpp"

namespace cgr {

struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

using Meta = std::map<std::string, std::string>;

// Setting this meta key to "true" permits self loops.
inline constexpr const char* kAllowSelfLoops = "allow_self_loops";

struct Graph {
    std::size_t num_nodes = 0;
    std::size_t feature_dim = 0;
    std::vector<double> x;  // row-major [num_nodes, feature_dim]
    std::vector<Edge> edges;
    double y = 0.0;
    Meta meta;

    Tensor features() const { return Tensor::matrix(num_nodes, feature_dim, x); }
    double feature(std::size_t node, std::size_t k) const { return x[node * feature_dim + k]; }

    friend bool operator==(const Graph&, const Graph&) = default;

    void validate() const {
        if (num_nodes == 0) throw ValidationError("graph has no nodes");
        if (x.size() != num_nodes * feature_dim) throw ValidationError("feature matrix does not match num_nodes x feature_dim");
        for (double v : x)
            if (!std::isfinite(v)) throw ValidationError("non-finite node feature");
        auto it = meta.find(kAllowSelfLoops);
        const bool loops_ok = it != meta.end() && it->second == "true";
        for (const auto& e : edges) {
            if (e.src >= num_nodes || e.dst >= num_nodes) {
                throw ValidationError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ") endpoint >= n = " + std::to_string(num_nodes));
            }
            if (e.src == e.dst && !loops_ok) throw ValidationError("self loop on node " + std::to_string(e.src));
        }
    }
};

// Disjoint union of graphs. Node i of graph g lives at row node_offsets[g] + i.
struct Batch {
    std::size_t num_graphs = 0;
    std::size_t feature_dim = 0;
    Tensor x;  // [N_total, d]
    Index src;
    Index dst;
    Index graph_index;  // node -> graph, non-decreasing
    std::vector<double> targets;
    std::vector<std::size_t> node_offsets;  // size num_graphs + 1
    std::vector<std::size_t> edge_offsets;  // size num_graphs + 1

    std::size_t num_nodes() const { return graph_index.size(); }
    std::size_t num_edges() const { return src.size(); }
    Tensor target_tensor() const { return Tensor::vector(targets); }

    friend bool operator==(const Batch& a, const Batch& b) {
        return a.num_graphs == b.num_graphs && a.feature_dim == b.feature_dim && a.x.shape() == b.x.shape() && a.x.values() == b.x.values() &&
               a.src == b.src && a.dst == b.dst && a.graph_index == b.graph_index && a.targets == b.targets && a.node_offsets == b.node_offsets &&
               a.edge_offsets == b.edge_offsets;
    }
};

inline Batch make_batch(std::span<const Graph* const> graphs) {
    if (graphs.empty()) throw ContractError("batch: no graphs");
    Batch b;
    b.num_graphs = graphs.size();
    b.feature_dim = graphs.front()->feature_dim;
    std::vector<double> x;
    b.node_offsets.push_back(0);
    b.edge_offsets.push_back(0);
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const Graph& gr = *graphs[g];
        if (gr.feature_dim != b.feature_dim) {
            throw ShapeError("batch: feature dim " + std::to_string(gr.feature_dim) + " differs from " + std::to_string(b.feature_dim));
        }
        const std::size_t off = b.node_offsets.back();
        x.insert(x.end(), gr.x.begin(), gr.x.end());
        for (const auto& e : gr.edges) {
            b.src.push_back(e.src + off);
            b.dst.push_back(e.dst + off);
        }
        b.graph_index.insert(b.graph_index.end(), gr.num_nodes, g);
        b.targets.push_back(gr.y);
        b.node_offsets.push_back(off + gr.num_nodes);
        b.edge_offsets.push_back(b.src.size());
    }
    b.x = Tensor::matrix(b.num_nodes(), b.feature_dim, std::move(x));
    return b;
}

inline Batch make_batch(std::span<const Graph> graphs) {
    std::vector<const Graph*> ptrs;
    ptrs.reserve(graphs.size());
    for (const auto& g : graphs) ptrs.push_back(&g);
    return make_batch(std::span<const Graph* const>(ptrs));
}

// Graphs selected by index, in the given order.
inline Batch make_batch(std::span<const Graph> graphs, std::span<const std::size_t> order) {
    std::vector<const Graph*> ptrs;
    ptrs.reserve(order.size());
    for (auto i : order) ptrs.push_back(&graphs[i]);
    return make_batch(std::span<const Graph* const>(ptrs));
}

// Inverse of make_batch; meta is not carried by batches and comes back empty.
inline std::vector<Graph> unbatch(const Batch& b) {
    std::vector<Graph> out(b.num_graphs);
    for (std::size_t g = 0; g < b.num_graphs; ++g) {
        Graph& gr = out[g];
        const std::size_t lo = b.node_offsets[g], hi = b.node_offsets[g + 1];
        gr.num_nodes = hi - lo;
        gr.feature_dim = b.feature_dim;
        gr.x.assign(b.x.data().begin() + lo * b.feature_dim, b.x.data().begin() + hi * b.feature_dim);
        for (std::size_t e = b.edge_offsets[g]; e < b.edge_offsets[g + 1]; ++e) gr.edges.push_back({b.src[e] - lo, b.dst[e] - lo});
        gr.y = b.targets[g];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON dataset: {"n", "edges", "x", "y", "meta"} in that order.

inline std::string graph_to_json_line(const Graph& g) {
    nlohmann::ordered_json j;
    j["n"] = g.num_nodes;
    auto edges = nlohmann::ordered_json::array();
    for (const auto& e : g.edges) edges.push_back({e.src, e.dst});
    j["edges"] = std::move(edges);
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < g.feature_dim; ++k) row.push_back(g.feature(i, k));
        rows.push_back(std::move(row));
    }
    j["x"] = std::move(rows);
    j["y"] = g.y;
    auto meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : g.meta) meta[k] = v;
    j["meta"] = std::move(meta);
    return j.dump();
}

inline Graph graph_from_json_line(const std::string& line, std::size_t line_no) {
    auto fail = [&](const std::string& what) { return ParseError("line " + std::to_string(line_no) + ": " + what); };
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw fail(e.what());
    }
    if (!j.is_object()) throw fail("record is not an object");
    for (const char* key : {"n", "edges", "x", "y"})
        if (!j.contains(key)) throw fail(std::string("missing key \"") + key + "\"");

    Graph g;
    try {
        if (!j["n"].is_number_unsigned()) throw fail("\"n\" must be a non-negative integer");
        g.num_nodes = j["n"].get<std::size_t>();
        for (const auto& e : j["edges"]) {
            if (!e.is_array() || e.size() != 2) throw fail("edge must be a pair");
            g.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
        }
        const auto& rows = j["x"];
        if (!rows.is_array() || rows.size() != g.num_nodes) throw fail("\"x\" must have n rows");
        g.feature_dim = rows.empty() ? 0 : rows[0].size();
        for (const auto& row : rows) {
            if (!row.is_array() || row.size() != g.feature_dim) throw fail("ragged feature rows");
            for (const auto& v : row) {
                if (!v.is_number()) throw fail("non-numeric feature");
                g.x.push_back(v.get<double>());
            }
        }
        if (!j["y"].is_number()) throw fail("\"y\" must be a number");
        g.y = j["y"].get<double>();
        if (j.contains("meta")) {
            for (const auto& [k, v] : j["meta"].items()) {
                if (!v.is_string()) throw fail("meta values must be strings");
                g.meta[k] = v.get<std::string>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw fail(e.what());
    }
    try {
        g.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    return g;
}

inline std::vector<Graph> read_dataset(std::istream& in) {
    std::vector<Graph> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(graph_from_json_line(line, line_no));
    }
    return out;
}

inline void write_dataset(std::ostream& out, std::span<const Graph> graphs) {
    for (const auto& g : graphs) out << graph_to_json_line(g) << '\n';
}

inline std::vector<Graph> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset " + path);
    return read_dataset(in);
}

inline void save_dataset(std::span<const Graph> graphs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset " + path);
    write_dataset(out, graphs);
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace cgr
