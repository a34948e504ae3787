#pragma once

// Synthetic spurious-motif regression graphs. Each graph is a base graph (the
// confounding part) plus a five-node motif (the causal part) joined by one
// bridge edge. The target depends only on the motif kind and a continuous
// signal s carried by one motif node:
//   y = a_M + b * s + noise.
// In training the base kind agrees with the motif with probability r, which
// makes the base a spurious predictor of y.

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cgr/errors.hpp"
#include "cgr/graph.hpp"

namespace cgr {

enum class MotifKind { cycle5 = 0, house = 1, star4 = 2 };
enum class BaseKind { tree = 0, ladder = 1, wheel = 2 };
enum class ShiftKind { none, covariate, concept_shift };

inline constexpr std::array<MotifKind, 3> kMotifKinds{MotifKind::cycle5, MotifKind::house, MotifKind::star4};
inline constexpr std::array<BaseKind, 3> kBaseKinds{BaseKind::tree, BaseKind::ladder, BaseKind::wheel};
inline constexpr std::size_t kMotifSize = 5;
inline constexpr std::size_t kFeatureDim = 4;

inline std::string to_string(MotifKind m) {
    switch (m) {
        case MotifKind::cycle5: return "cycle5";
        case MotifKind::house: return "house";
        case MotifKind::star4: return "star4";
    }
    return "?";
}

inline std::string to_string(BaseKind b) {
    switch (b) {
        case BaseKind::tree: return "tree";
        case BaseKind::ladder: return "ladder";
        case BaseKind::wheel: return "wheel";
    }
    return "?";
}

inline std::string to_string(ShiftKind s) {
    switch (s) {
        case ShiftKind::none: return "none";
        case ShiftKind::covariate: return "covariate";
        case ShiftKind::concept_shift: return "concept";
    }
    return "?";
}

inline ShiftKind parse_shift(const std::string& s) {
    if (s == "none") return ShiftKind::none;
    if (s == "covariate") return ShiftKind::covariate;
    if (s == "concept") return ShiftKind::concept_shift;
    throw ValidationError("unknown shift '" + s + "'");
}

struct SynthSpec {
    std::size_t num_train = 2000;
    std::size_t num_id_val = 500;
    std::size_t num_id_test = 500;
    std::size_t num_ood_val = 500;
    std::size_t num_ood_test = 500;
    std::size_t n_lo = 6;
    std::size_t n_hi = 15;
    double spurious_strength = 0.9;
    ShiftKind shift = ShiftKind::concept_shift;
    double signal_coeff = 2.0;
    std::map<std::string, double> motif_intercepts{{"cycle5", 0.0}, {"house", 3.0}, {"star4", 6.0}};
    double noise_std = 0.1;
    std::uint64_t seed = 0;

    double intercept(MotifKind m) const { return motif_intercepts.at(to_string(m)); }

    void validate() const {
        if (!(spurious_strength >= 0.0 && spurious_strength <= 1.0)) throw ValidationError("spurious_strength must lie in [0, 1]");
        if (n_lo > n_hi) throw ValidationError("n_lo must not exceed n_hi");
        if (n_lo < 4) throw ValidationError("base graphs need at least 4 nodes");
        if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be >= 0");
        if (!std::isfinite(signal_coeff)) throw ValidationError("signal_coeff must be finite");
        for (auto m : kMotifKinds)
            if (!motif_intercepts.count(to_string(m))) throw ValidationError("missing intercept for motif " + to_string(m));
    }
};

struct SplitBundle {
    std::vector<Graph> train;
    std::vector<Graph> id_val;
    std::vector<Graph> id_test;
    std::vector<Graph> ood_val;
    std::vector<Graph> ood_test;
};

inline const std::array<const char*, 5> kSplitNames{"train", "id_val", "id_test", "ood_val", "ood_test"};

inline std::vector<Graph>& split_by_name(SplitBundle& b, const std::string& name) {
    if (name == "train") return b.train;
    if (name == "id_val") return b.id_val;
    if (name == "id_test") return b.id_test;
    if (name == "ood_val") return b.ood_val;
    if (name == "ood_test") return b.ood_test;
    throw ContractError("unknown split '" + name + "'");
}

inline const std::vector<Graph>& split_by_name(const SplitBundle& b, const std::string& name) {
    return split_by_name(const_cast<SplitBundle&>(b), name);
}

namespace datagen_detail {

using UEdge = std::pair<std::size_t, std::size_t>;

inline std::vector<UEdge> motif_edges(MotifKind m) {
    switch (m) {
        case MotifKind::cycle5: return {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}};
        case MotifKind::house: return {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 0}, {4, 1}};
        case MotifKind::star4: return {{0, 1}, {0, 2}, {0, 3}, {0, 4}};
    }
    return {};
}

// Motif node carrying the signal, and the motif node the bridge attaches to.
inline constexpr std::size_t kSignalNode = 0;
inline constexpr std::size_t kBridgeNode = 2;

template <typename Rng>
std::vector<UEdge> base_edges(BaseKind b, std::size_t n, Rng& rng) {
    std::vector<UEdge> e;
    switch (b) {
        case BaseKind::tree:
            for (std::size_t i = 1; i < n; ++i) e.emplace_back(std::uniform_int_distribution<std::size_t>(0, i - 1)(rng), i);
            break;
        case BaseKind::ladder: {
            const std::size_t k = n / 2;
            for (std::size_t i = 0; i + 1 < k; ++i) {
                e.emplace_back(i, i + 1);
                e.emplace_back(k + i, k + i + 1);
            }
            for (std::size_t i = 0; i < k; ++i) e.emplace_back(i, k + i);
            if (n % 2 == 1) e.emplace_back(k - 1, n - 1);
            break;
        }
        case BaseKind::wheel:
            for (std::size_t i = 1; i < n; ++i) {
                e.emplace_back(0, i);
                e.emplace_back(i, i + 1 < n ? i + 1 : 1);
            }
            break;
    }
    return e;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

enum class SplitRole { in_distribution, ood };

struct SplitPlan {
    const char* name;
    std::size_t count;
    std::uint64_t tag;
    SplitRole role;
};

template <typename Rng>
Graph make_graph(const SynthSpec& spec, const SplitPlan& plan, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto motif = kMotifKinds[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
    const auto matched = static_cast<std::size_t>(motif);

    // Base kind: the matched base with probability r in distribution; under
    // concept shift the rule is inverted so the base now points elsewhere.
    double p_match = spec.spurious_strength;
    if (plan.role == SplitRole::ood && spec.shift == ShiftKind::concept_shift) p_match = 1.0 - spec.spurious_strength;
    std::size_t base_idx = matched;
    if (!(unit(rng) < p_match)) base_idx = (matched + 1 + std::uniform_int_distribution<std::size_t>(0, 1)(rng)) % 3;
    const auto base = kBaseKinds[base_idx];

    std::size_t lo = spec.n_lo, hi = spec.n_hi;
    if (plan.role == SplitRole::ood && spec.shift == ShiftKind::covariate) {
        lo = spec.n_hi + 1;
        hi = 2 * spec.n_hi;
    }
    const std::size_t nb = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    const double s = unit(rng);
    double noise = 0.0;
    if (spec.noise_std > 0.0) noise = std::normal_distribution<double>(0.0, spec.noise_std)(rng);

    std::vector<UEdge> und = base_edges(base, nb, rng);
    for (auto [a, b] : motif_edges(motif)) und.emplace_back(nb + a, nb + b);
    const std::size_t anchor = std::uniform_int_distribution<std::size_t>(0, nb - 1)(rng);
    und.emplace_back(anchor, nb + kBridgeNode);

    Graph g;
    g.num_nodes = nb + kMotifSize;
    g.feature_dim = kFeatureDim;
    std::vector<std::size_t> degree(g.num_nodes, 0);
    for (auto [a, b] : und) {
        g.edges.push_back({a, b});
        g.edges.push_back({b, a});
        ++degree[a];
        ++degree[b];
    }
    // Features: [base role, motif role, signal-node role] carrying degree / 4,
    // then the signal s (nonzero only on the signal node).
    g.x.assign(g.num_nodes * kFeatureDim, 0.0);
    const std::size_t signal = nb + kSignalNode;
    for (std::size_t v = 0; v < g.num_nodes; ++v) {
        const std::size_t role = v < nb ? 0 : (v == signal ? 2 : 1);
        g.x[v * kFeatureDim + role] = static_cast<double>(degree[v]) / 4.0;
    }
    g.x[signal * kFeatureDim + 3] = s;
    g.y = spec.intercept(motif) + spec.signal_coeff * s + noise;

    std::string motif_nodes;
    for (std::size_t i = 0; i < kMotifSize; ++i) motif_nodes += (i ? "," : "") + std::to_string(nb + i);
    g.meta = {{"motif", to_string(motif)},
              {"base", to_string(base)},
              {"base_size", std::to_string(nb)},
              {"s", format_double(s)},
              {"split", plan.name},
              {"motif_nodes", motif_nodes},
              {"signal_node", std::to_string(signal)}};
    return g;
}

}  // namespace datagen_detail

// Randomness for graph i of a split comes from (seed, split, i) alone, so
// graphs can be generated in any order with identical results.
inline SplitBundle generate(const SynthSpec& spec) {
    spec.validate();
    using datagen_detail::SplitPlan;
    using datagen_detail::SplitRole;
    const bool has_ood = spec.shift != ShiftKind::none;
    const std::array<SplitPlan, 5> plans{{
        {"train", spec.num_train, 1, SplitRole::in_distribution},
        {"id_val", spec.num_id_val, 2, SplitRole::in_distribution},
        {"id_test", spec.num_id_test, 3, SplitRole::in_distribution},
        {"ood_val", has_ood ? spec.num_ood_val : 0, 4, SplitRole::ood},
        {"ood_test", has_ood ? spec.num_ood_test : 0, 5, SplitRole::ood},
    }};
    SplitBundle bundle;
    for (const auto& plan : plans) {
        auto& out = split_by_name(bundle, plan.name);
        out.reserve(plan.count);
        for (std::size_t i = 0; i < plan.count; ++i) {
            std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), static_cast<std::uint32_t>(plan.tag),
                              static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(static_cast<std::uint64_t>(i) >> 32)};
            std::mt19937_64 rng(seq);
            out.push_back(datagen_detail::make_graph(spec, plan, rng));
        }
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Summaries

struct SplitStats {
    std::size_t count = 0;
    // contingency[motif][base] graph counts.
    std::array<std::array<std::size_t, 3>, 3> contingency{};
    double y_mean = 0.0;
    double y_std = 0.0;

    // Fraction of graphs whose base is the one matched to their motif.
    double diagonal_mass() const {
        if (count == 0) return 0.0;
        std::size_t d = 0;
        for (std::size_t i = 0; i < 3; ++i) d += contingency[i][i];
        return static_cast<double>(d) / static_cast<double>(count);
    }
    // Row-normalised P(base | motif).
    std::array<std::array<double, 3>, 3> row_normalized() const {
        std::array<std::array<double, 3>, 3> out{};
        for (std::size_t i = 0; i < 3; ++i) {
            std::size_t row = contingency[i][0] + contingency[i][1] + contingency[i][2];
            for (std::size_t j = 0; j < 3; ++j) out[i][j] = row ? static_cast<double>(contingency[i][j]) / static_cast<double>(row) : 0.0;
        }
        return out;
    }
};

inline std::size_t motif_index(const std::string& name) {
    for (auto m : kMotifKinds)
        if (to_string(m) == name) return static_cast<std::size_t>(m);
    throw ContractError("unknown motif '" + name + "'");
}

inline std::size_t base_index(const std::string& name) {
    for (auto b : kBaseKinds)
        if (to_string(b) == name) return static_cast<std::size_t>(b);
    throw ContractError("unknown base '" + name + "'");
}

inline SplitStats split_stats(const std::vector<Graph>& graphs) {
    SplitStats st;
    st.count = graphs.size();
    double sum = 0.0, sum2 = 0.0;
    for (const auto& g : graphs) {
        auto m = g.meta.find("motif");
        auto b = g.meta.find("base");
        if (m != g.meta.end() && b != g.meta.end()) ++st.contingency[motif_index(m->second)][base_index(b->second)];
        sum += g.y;
    }
    if (st.count) {
        st.y_mean = sum / static_cast<double>(st.count);
        for (const auto& g : graphs) sum2 += (g.y - st.y_mean) * (g.y - st.y_mean);
        st.y_std = std::sqrt(sum2 / static_cast<double>(st.count));
    }
    return st;
}

inline std::map<std::string, SplitStats> split_stats(const SplitBundle& bundle) {
    std::map<std::string, SplitStats> out;
    for (const char* name : kSplitNames) out[name] = split_stats(split_by_name(bundle, name));
    return out;
}

inline nlohmann::ordered_json stats_to_json(const std::map<std::string, SplitStats>& stats) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const char* name : kSplitNames) {
        const auto& st = stats.at(name);
        nlohmann::ordered_json s;
        s["count"] = st.count;
        auto table = nlohmann::ordered_json::object();
        auto norm = st.row_normalized();
        for (auto m : kMotifKinds) {
            auto row = nlohmann::ordered_json::object();
            for (auto b : kBaseKinds) {
                row[to_string(b)] = {{"count", st.contingency[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)]},
                                     {"freq", norm[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)]}};
            }
            table[to_string(m)] = std::move(row);
        }
        s["contingency"] = std::move(table);
        s["diagonal_mass"] = st.diagonal_mass();
        s["y_mean"] = st.y_mean;
        s["y_std"] = st.y_std;
        j[name] = std::move(s);
    }
    return j;
}

}  // namespace cgr
