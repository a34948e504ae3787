#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cgr/datagen.hpp"
#include "cgr/graph.hpp"
#include "cgr/model.hpp"
#include "cgr/objective.hpp"
#include "cgr/optim.hpp"

namespace cgr {

enum class Ablation { full, no_gib, no_ci, no_both };
enum class Head { causal, confounding };

inline constexpr std::array<Ablation, 4> kAblations{Ablation::full, Ablation::no_gib, Ablation::no_ci, Ablation::no_both};

inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_gib: return "no_gib";
        case Ablation::no_ci: return "no_ci";
        case Ablation::no_both: return "no_both";
    }
    return "?";
}

inline Ablation parse_ablation(const std::string& s) {
    for (auto a : kAblations)
        if (to_string(a) == s) return a;
    throw ValidationError("unknown ablation '" + s + "'");
}

inline std::string to_string(Head h) { return h == Head::causal ? "causal" : "confounding"; }

inline Head parse_head(const std::string& s) {
    if (s == "causal") return Head::causal;
    if (s == "confounding") return Head::confounding;
    throw ValidationError("unknown head '" + s + "'");
}

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr_init = 1e-3;
    double lr_min = 1e-8;
    LossWeights weights;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    std::size_t eval_every = 10;
    std::string checkpoint_path;
    ModelConfig model;

    void validate() const {
        if (epochs < 1) throw ContractError("epochs must be >= 1");
        if (batch_size < 2) throw ContractError("batch_size must be >= 2");
        if (!(lr_init > 0.0)) throw ContractError("lr_init must be > 0");
        if (!(lr_min >= 0.0) || lr_min > lr_init) throw ContractError("lr_min must lie in [0, lr_init]");
        if (eval_every < 1) throw ContractError("eval_every must be >= 1");
        weights.validate();
        model.validate();
    }
};

// Loss weights actually used by an ablation.
inline LossWeights effective_weights(const TrainConfig& c) {
    LossWeights w = c.weights;
    switch (c.ablation) {
        case Ablation::full: break;
        case Ablation::no_gib: w.alpha = w.beta = 0.0; break;
        case Ablation::no_ci: w.lambda = 0.0; break;
        case Ablation::no_both: w.alpha = w.beta = w.lambda = 0.0; break;
    }
    return w;
}

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct SplitEval {
    Metrics causal;
    Metrics confounding;
    LossReport loss;
    std::optional<double> mask_quality;
};

struct StepRecord {
    std::size_t epoch = 0;
    std::size_t graphs = 0;
    LossReport loss;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    LossReport train_loss;   // mean over the epoch's graphs
    Metrics train_metrics;   // causal head, predictions made before each update
    std::map<std::string, SplitEval> eval;  // empty when the epoch was not evaluated
};

struct Selection {
    std::string split;          // validation split used
    std::size_t epoch = 0;      // 0 when the split is empty
    Metrics validation;
    Metrics test;               // causal head on the matching test split
    Metrics test_confounding;
};

struct RunRecord {
    TrainConfig config;
    std::uint64_t model_init_seed = 0;
    LossWeights effective_weights;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    Selection id_selection;
    Selection ood_selection;
    // The no_both ablation regresses with squared error rather than l1.
    bool squared_error_ablation = false;

    const EpochRecord& last() const { return epochs.back(); }
};

// ---------------------------------------------------------------------------
// Evaluation

namespace trainer_detail {

// Consecutive chunks of at most `size`; a trailing singleton joins the chunk
// before it so every chunk has at least two graphs when possible.
inline std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + size)));
    if (out.size() > 1 && out.back().size() == 1) {
        out[out.size() - 2].push_back(out.back().front());
        out.pop_back();
    }
    return out;
}

inline std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

struct ErrorAccumulator {
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    std::size_t n = 0;

    void add(double pred, double y) {
        const double d = pred - y;
        abs_sum += std::abs(d);
        sq_sum += d * d;
        ++n;
    }
    Metrics metrics() const {
        if (n == 0) return {};
        return {abs_sum / static_cast<double>(n), std::sqrt(sq_sum / static_cast<double>(n))};
    }
};

struct LossAccumulator {
    LossReport sum;
    std::size_t n = 0;

    void add(const LossReport& r, std::size_t weight) {
        const double w = static_cast<double>(weight);
        sum.total += w * r.total;
        sum.l_cp += w * r.l_cp;
        sum.l_sp += w * r.l_sp;
        sum.l_reg += w * r.l_reg;
        sum.l_ci += w * r.l_ci;
        n += weight;
    }
    LossReport mean() const {
        if (n == 0) return {};
        const double w = static_cast<double>(n);
        return {sum.total / w, sum.l_cp / w, sum.l_sp / w, sum.l_reg / w, sum.l_ci / w};
    }
};

inline std::vector<std::size_t> motif_node_ids(const Graph& g) {
    auto it = g.meta.find("motif_nodes");
    if (it == g.meta.end()) throw ContractError("mask_quality: graph meta has no motif_nodes");
    std::vector<std::size_t> ids;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t v = std::stoull(tok);
        if (v >= g.num_nodes) throw ContractError("mask_quality: motif node id out of range");
        ids.push_back(v);
    }
    return ids;
}

inline bool has_motif_meta(const std::vector<Graph>& graphs) {
    return std::all_of(graphs.begin(), graphs.end(), [](const Graph& g) { return g.meta.count("motif_nodes") > 0; });
}

// Share of node-mask mass that falls on motif nodes, per graph of the batch.
inline void accumulate_mask_quality(const Batch& b, const Tensor& node_mask, const std::vector<const Graph*>& graphs, double& sum) {
    for (std::size_t g = 0; g < graphs.size(); ++g) {
        const std::size_t off = b.node_offsets[g];
        double total = 0.0, motif = 0.0;
        for (std::size_t v = off; v < b.node_offsets[g + 1]; ++v) total += node_mask[v];
        for (auto v : motif_node_ids(*graphs[g])) motif += node_mask[off + v];
        sum += total > 0.0 ? motif / total : 0.0;
    }
}

}  // namespace trainer_detail

inline constexpr std::size_t kEvalBatchSize = 64;

inline Metrics evaluate(const ModelState& model, const std::vector<Graph>& graphs, Head head, std::size_t batch_size = kEvalBatchSize) {
    if (graphs.empty()) throw ContractError("evaluate: no graphs");
    const ModelState m = detached(model);
    trainer_detail::ErrorAccumulator acc;
    for (const auto& idx : trainer_detail::chunk(trainer_detail::iota(graphs.size()), batch_size)) {
        Batch b = make_batch(std::span<const Graph>(graphs), idx);
        auto out = forward(m, b);
        const Tensor& pred = head == Head::causal ? out.mu_c : out.mu_s;
        for (std::size_t i = 0; i < b.num_graphs; ++i) acc.add(pred[i], b.targets[i]);
    }
    return acc.metrics();
}

inline double mask_quality(const ModelState& model, const std::vector<Graph>& graphs, std::size_t batch_size = kEvalBatchSize) {
    if (graphs.empty()) throw ContractError("mask_quality: no graphs");
    const ModelState m = detached(model);
    double sum = 0.0;
    for (const auto& idx : trainer_detail::chunk(trainer_detail::iota(graphs.size()), batch_size)) {
        std::vector<const Graph*> ptrs;
        for (auto i : idx) ptrs.push_back(&graphs[i]);
        for (auto* g : ptrs) trainer_detail::motif_node_ids(*g);
        Batch b = make_batch(std::span<const Graph* const>(ptrs));
        auto out = forward(m, b);
        trainer_detail::accumulate_mask_quality(b, out.masks.node, ptrs, sum);
    }
    return sum / static_cast<double>(graphs.size());
}

// Predicts the training-set mean target for every graph.
inline Metrics mean_predictor_metrics(const std::vector<Graph>& train, const std::vector<Graph>& graphs) {
    if (train.empty() || graphs.empty()) throw ContractError("mean predictor needs nonempty train and evaluation sets");
    double mean = 0.0;
    for (const auto& g : train) mean += g.y;
    mean /= static_cast<double>(train.size());
    trainer_detail::ErrorAccumulator acc;
    for (const auto& g : graphs) acc.add(mean, g.y);
    return acc.metrics();
}

// Metrics for both heads, the objective and (when meta allows) mask quality
// on one split. Pairings for the contrastive term come from `rng`.
template <typename Rng>
SplitEval evaluate_split(const ModelState& model, const std::vector<Graph>& graphs, const LossWeights& w, std::size_t batch_size, Rng& rng) {
    if (graphs.empty()) throw ContractError("evaluate_split: no graphs");
    const ModelState m = detached(model);
    const bool with_masks = trainer_detail::has_motif_meta(graphs);
    trainer_detail::ErrorAccumulator causal, confounding;
    trainer_detail::LossAccumulator losses;
    double mask_sum = 0.0;
    for (const auto& idx : trainer_detail::chunk(trainer_detail::iota(graphs.size()), batch_size)) {
        std::vector<const Graph*> ptrs;
        for (auto i : idx) ptrs.push_back(&graphs[i]);
        Batch b = make_batch(std::span<const Graph* const>(ptrs));
        LossWeights wb = w;
        if (b.num_graphs < 2) wb.lambda = 0.0;
        auto pairing = random_pairing(b.num_graphs, rng);
        auto r = evaluate_objective(m, b, wb, pairing);
        for (std::size_t i = 0; i < b.num_graphs; ++i) {
            causal.add(r.output.mu_c[i], b.targets[i]);
            confounding.add(r.output.mu_s[i], b.targets[i]);
        }
        losses.add(r.report, b.num_graphs);
        if (with_masks) trainer_detail::accumulate_mask_quality(b, r.output.masks.node, ptrs, mask_sum);
    }
    SplitEval e;
    e.causal = causal.metrics();
    e.confounding = confounding.metrics();
    e.loss = losses.mean();
    if (with_masks) e.mask_quality = mask_sum / static_cast<double>(graphs.size());
    return e;
}

// ---------------------------------------------------------------------------
// Training

namespace trainer_detail {

inline void check_finite(const LossReport& r, std::size_t epoch, std::size_t step) {
    const std::pair<const char*, double> parts[] = {{"l_cp", r.l_cp}, {"l_sp", r.l_sp}, {"l_reg", r.l_reg}, {"l_ci", r.l_ci}, {"total", r.total}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite loss component " + std::string(name) + " at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step));
        }
    }
}

inline std::uint64_t eval_seed(std::uint64_t seed, std::size_t epoch, std::size_t split) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(epoch),
                      static_cast<std::uint32_t>(split), 0x65u};
    std::array<std::uint32_t, 2> words{};
    seq.generate(words.begin(), words.end());
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline void update_selection(Selection& sel, const EpochRecord& e, const std::string& val, const std::string& test) {
    auto v = e.eval.find(val);
    if (v == e.eval.end()) return;
    if (sel.epoch != 0 && !(v->second.causal.mae < sel.validation.mae)) return;
    sel.epoch = e.epoch;
    sel.validation = v->second.causal;
    auto t = e.eval.find(test);
    if (t != e.eval.end()) {
        sel.test = t->second.causal;
        sel.test_confounding = t->second.confounding;
    }
}

}  // namespace trainer_detail

struct TrainResult {
    ModelState model;
    RunRecord record;
};

// Splits evaluated at evaluation epochs, in output order.
inline const std::array<const char*, 4> kEvalSplits{"id_val", "id_test", "ood_val", "ood_test"};

inline TrainResult train(const TrainConfig& config, const SplitBundle& bundle, std::uint64_t model_init_seed) {
    config.validate();
    if (bundle.train.empty()) throw ContractError("train: empty training split");
    const LossWeights w = effective_weights(config);

    TrainResult result;
    RunRecord& rec = result.record;
    rec.config = config;
    rec.model_init_seed = model_init_seed;
    rec.effective_weights = w;
    rec.squared_error_ablation = config.ablation == Ablation::no_both;
    rec.id_selection.split = "id_val";
    rec.ood_selection.split = "ood_val";

    ModelState& model = result.model;
    model = init_model(config.model, model_init_seed);
    Adam adam;
    std::mt19937_64 rng(config.seed);
    const auto& train_set = bundle.train;
    std::vector<std::size_t> order = trainer_detail::iota(train_set.size());

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochRecord er;
        er.epoch = epoch;
        er.lr = cosine_lr(epoch - 1, config.epochs, config.lr_init, config.lr_min);
        std::shuffle(order.begin(), order.end(), rng);
        trainer_detail::LossAccumulator losses;
        trainer_detail::ErrorAccumulator errors;
        std::size_t step = 0;
        for (const auto& idx : trainer_detail::chunk(order, config.batch_size)) {
            ++step;
            Batch b = make_batch(std::span<const Graph>(train_set), idx);
            auto pairing = random_pairing(b.num_graphs, rng);
            LossWeights wb = w;
            if (b.num_graphs < 2) wb.lambda = 0.0;
            auto r = evaluate_objective(model, b, wb, pairing);
            trainer_detail::check_finite(r.report, epoch, step);
            for (std::size_t i = 0; i < b.num_graphs; ++i) errors.add(r.output.mu_c[i], b.targets[i]);
            losses.add(r.report, b.num_graphs);
            rec.steps.push_back({epoch, b.num_graphs, r.report});
            Gradients grads = backward(r.total, model.params);
            adam.step(model.params, grads, er.lr);
        }
        er.train_loss = losses.mean();
        er.train_metrics = errors.metrics();

        if (epoch % config.eval_every == 0 || epoch == config.epochs) {
            for (std::size_t s = 0; s < kEvalSplits.size(); ++s) {
                const auto& graphs = split_by_name(bundle, kEvalSplits[s]);
                if (graphs.empty()) continue;
                std::mt19937_64 erng(trainer_detail::eval_seed(config.seed, epoch, s));
                er.eval[kEvalSplits[s]] = evaluate_split(model, graphs, w, config.batch_size, erng);
            }
            trainer_detail::update_selection(rec.id_selection, er, "id_val", "id_test");
            trainer_detail::update_selection(rec.ood_selection, er, "ood_val", "ood_test");
        }
        rec.epochs.push_back(std::move(er));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialisation

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},
            {"num_layers", c.gin.num_layers},
            {"hidden_dim", c.gin.hidden_dim},
            {"epsilon", c.gin.epsilon},
            {"pooling", to_string(c.gin.pooling)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.gin.num_layers = j.at("num_layers").get<std::size_t>();
    c.gin.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.gin.epsilon = j.at("epsilon").get<double>();
    c.gin.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.validate();
    return c;
}

inline std::string checkpoint_to_string(const ModelState& m) {
    nlohmann::json j;
    j["format_version"] = kCheckpointVersion;
    j["config"] = model_config_to_json(m.config);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, t] : m.params) params[name] = {{"shape", t.shape()}, {"data", t.values()}};
    j["params"] = std::move(params);
    return j.dump() + "\n";
}

inline ModelState checkpoint_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    try {
        if (!j.is_object() || !j.contains("format_version")) throw ParseError("checkpoint: missing format_version");
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw IncompatibleVersionError("checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                                           std::to_string(kCheckpointVersion) + ")");
        }
        ModelState ref = init_model(model_config_from_json(j.at("config")), 0);
        const auto& params = j.at("params");
        if (params.size() != ref.params.size()) throw ParseError("checkpoint: parameter count does not match the configured model");
        ModelState m;
        m.config = ref.config;
        for (const auto& [name, t] : ref.params) {
            if (!params.contains(name)) throw ParseError("checkpoint: missing parameter '" + name + "'");
            const auto& p = params.at(name);
            auto shape = p.at("shape").get<Shape>();
            auto data = p.at("data").get<std::vector<double>>();
            if (shape != t.shape() || data.size() != t.numel()) throw ParseError("checkpoint: parameter '" + name + "' has the wrong shape");
            m.params.emplace(name, Tensor::parameter(std::move(shape), std::move(data)));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const ModelState& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out << checkpoint_to_string(m);
    if (!out) throw IoError("write failed for " + path);
}

inline ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline constexpr const char* kMetricsHeader = "epoch,split,mae,rmse,loss_total,loss_cp,loss_sp,loss_reg,loss_ci";

inline std::string metrics_row(std::size_t epoch, const std::string& split, const Metrics& m, const LossReport& l) {
    std::string row = std::to_string(epoch) + "," + split;
    for (double v : {m.mae, m.rmse, l.total, l.l_cp, l.l_sp, l.l_reg, l.l_ci}) row += "," + format_number(v);
    return row;
}

// One train row per epoch, then one row per evaluated split (causal head).
inline std::string metrics_csv(const RunRecord& rec) {
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const auto& e : rec.epochs) {
        out += metrics_row(e.epoch, "train", e.train_metrics, e.train_loss) + "\n";
        for (const char* s : kEvalSplits) {
            auto it = e.eval.find(s);
            if (it != e.eval.end()) out += metrics_row(e.epoch, s, it->second.causal, it->second.loss) + "\n";
        }
    }
    return out;
}

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr_init"] = c.lr_init;
    j["lr_min"] = c.lr_min;
    j["alpha"] = c.weights.alpha;
    j["beta"] = c.weights.beta;
    j["lambda"] = c.weights.lambda;
    j["tau"] = c.weights.tau;
    j["mi_half"] = c.weights.mi_half;
    j["infonce_standard"] = c.weights.infonce_standard;
    j["seed"] = c.seed;
    j["ablation"] = to_string(c.ablation);
    j["eval_every"] = c.eval_every;
    j["checkpoint_path"] = c.checkpoint_path;
    j["model"] = nlohmann::ordered_json(model_config_to_json(c.model));
    return j;
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) { return {{"mae", m.mae}, {"rmse", m.rmse}}; }

inline nlohmann::ordered_json run_summary_json(const RunRecord& rec) {
    nlohmann::ordered_json j;
    j["config"] = train_config_to_json(rec.config);
    j["model_init_seed"] = rec.model_init_seed;
    j["effective_weights"] = {{"alpha", rec.effective_weights.alpha}, {"beta", rec.effective_weights.beta}, {"lambda", rec.effective_weights.lambda}};
    if (rec.squared_error_ablation) j["deviation"] = "no_both regresses the causal head with squared error instead of l1";
    const auto& last = rec.last();
    nlohmann::ordered_json fin;
    fin["epoch"] = last.epoch;
    fin["train_loss"] = last.train_loss.total;
    for (const auto& [split, e] : last.eval) {
        nlohmann::ordered_json s;
        s["causal"] = metrics_to_json(e.causal);
        s["confounding"] = metrics_to_json(e.confounding);
        if (e.mask_quality) s["mask_quality"] = *e.mask_quality;
        fin[split] = std::move(s);
    }
    j["final"] = std::move(fin);
    for (const auto* sel : {&rec.id_selection, &rec.ood_selection}) {
        if (sel->epoch == 0) continue;
        nlohmann::ordered_json s;
        s["epoch"] = sel->epoch;
        s["validation"] = metrics_to_json(sel->validation);
        s["test"] = metrics_to_json(sel->test);
        s["test_confounding"] = metrics_to_json(sel->test_confounding);
        j[sel == &rec.id_selection ? "best_id" : "best_ood"] = std::move(s);
    }
    return j;
}

}  // namespace cgr
