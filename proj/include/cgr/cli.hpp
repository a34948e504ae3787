#pragma once

// Command-line driver: gen, train, eval, gradcheck, ablate.
//
// Every option of a command is also a config key. `--config FILE` reads flat
// `key=value` lines; flags given on the command line win over file values.
// Each command writes manifest.json and manifest.cfg into --out before doing
// any work; `cgr <command> --config <out>/manifest.cfg` repeats the run.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cgr/datagen.hpp"
#include "cgr/gradcheck_suite.hpp"
#include "cgr/trainer.hpp"

namespace cgr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace cli_detail {

namespace fs = std::filesystem;

struct UsageError : Error {
    using Error::Error;
};

inline std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return hex.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

using FlatConfig = std::map<std::string, std::string>;

inline FlatConfig read_flat_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path);
    FlatConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
        auto key = trim(line.substr(0, eq));
        if (key.empty() || key == "config") throw UsageError(path + ":" + std::to_string(line_no) + ": invalid key '" + key + "'");
        cfg[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"gen", "train", "eval", "gradcheck", "ablate"};
    return names;
}

inline bool is_global_key(const std::string& k) { return k == "seed" || k == "out"; }

// Splices config-file values into the argument list ahead of the user's own
// flags, so that explicit flags take precedence.
inline std::vector<std::string> splice_config(const std::vector<std::string>& args) {
    std::string config_path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file");
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty()) return rest;
    auto cfg = read_flat_config(config_path);
    std::vector<std::string> globals, locals;
    for (const auto& [k, v] : cfg) {
        if (v.empty()) continue;  // empty means the option's default
        (is_global_key(k) ? globals : locals).push_back("--" + k + "=" + v);
    }
    std::vector<std::string> out(globals);
    bool placed = false;
    for (const auto& a : rest) {
        out.push_back(a);
        if (!placed && std::find(command_names().begin(), command_names().end(), a) != command_names().end()) {
            out.insert(out.end(), locals.begin(), locals.end());
            placed = true;
        }
    }
    if (!placed && !locals.empty()) throw UsageError("config file keys need a command");
    return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw UsageError("invalid seed '" + tok + "' in seed list");
        }
    }
    if (out.empty()) throw UsageError("seed list is empty");
    return out;
}

inline std::vector<Ablation> parse_ablation_list(const std::string& s) {
    std::vector<Ablation> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(parse_ablation(tok));
        } catch (const ValidationError& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError("ablation list is empty");
    return out;
}

// Options shared by every command.
struct Globals {
    std::uint64_t seed = 0;
    std::string out = "out";
};

struct GenOptions {
    std::string shift = "concept";
    double r = 0.9;
    std::size_t num_train = 2000, num_id_val = 500, num_id_test = 500, num_ood_val = 500, num_ood_test = 500;
    std::size_t n_lo = 6, n_hi = 15;
    double signal_coeff = 2.0, noise_std = 0.1;
    double intercept_cycle5 = 0.0, intercept_house = 3.0, intercept_star4 = 6.0;
};

struct TrainOptions {
    std::string data;
    std::size_t epochs = 100, batch_size = 64, eval_every = 10;
    double lr_init = 1e-3, lr_min = 1e-8;
    double alpha = 0.5, beta = 0.5, lambda = 0.5, tau = 1.0;
    bool mi_half = true, infonce_standard = false;
    std::string ablation = "full";
    std::size_t layers = 3, hidden_dim = 64;
    double epsilon = 0.0;
    std::string pooling = "mean";
    std::string model_seed;  // empty: same as --seed
    std::string checkpoint;  // empty: <out>/model.ckpt.json
};

struct EvalOptions {
    std::string data;
    std::string checkpoint;
    std::string head = "both";
    std::size_t batch_size = 64;
};

struct GradcheckOptions {
    std::size_t instances = 100;
    double step = 1e-5;
    double tolerance = 1e-4;
};

struct AblateOptions {
    TrainOptions train;
    std::string seeds = "1,2,3";
    std::string ablations = "full,no_gib,no_ci,no_both";
};

inline void add_train_options(CLI::App* sub, TrainOptions& o, bool with_paths) {
    sub->add_option("--data", o.data, "Directory holding <split>.jsonl files")->required();
    sub->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--batch_size", o.batch_size, "Graphs per step")->check(CLI::Range(std::size_t{2}, std::numeric_limits<std::size_t>::max()));
    sub->add_option("--eval_every", o.eval_every, "Epochs between evaluations")->check(CLI::PositiveNumber);
    sub->add_option("--lr_init", o.lr_init, "Initial learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--lr_min", o.lr_min, "Final learning rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--alpha", o.alpha, "Weight of the I(C;G) bound")->check(CLI::NonNegativeNumber);
    sub->add_option("--beta", o.beta, "Weight of the confounding prediction loss")->check(CLI::NonNegativeNumber);
    sub->add_option("--lambda", o.lambda, "Weight of the intervention contrast")->check(CLI::NonNegativeNumber);
    sub->add_option("--tau", o.tau, "Similarity temperature")->check(CLI::PositiveNumber);
    sub->add_option("--mi_half", o.mi_half, "Use 1/2 E||H_c||^2 as the regulariser (else E||H_c||^2)");
    sub->add_option("--infonce_standard", o.infonce_standard, "Include the positive pair in the contrast denominator");
    sub->add_option("--ablation", o.ablation, "full | no_gib | no_ci | no_both")->check(CLI::IsMember({"full", "no_gib", "no_ci", "no_both"}));
    sub->add_option("--layers", o.layers, "GIN layers")->check(CLI::PositiveNumber);
    sub->add_option("--hidden_dim", o.hidden_dim, "Hidden width")->check(CLI::PositiveNumber);
    sub->add_option("--epsilon", o.epsilon, "GIN epsilon");
    sub->add_option("--pooling", o.pooling, "mean | sum")->check(CLI::IsMember({"mean", "sum"}));
    if (with_paths) {
        sub->add_option("--model_seed", o.model_seed, "Model initialisation seed (default: --seed)");
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default: <out>/model.ckpt.json)");
    }
}

inline TrainConfig make_train_config(const TrainOptions& o, std::uint64_t seed) {
    TrainConfig c;
    c.epochs = o.epochs;
    c.batch_size = o.batch_size;
    c.eval_every = o.eval_every;
    c.lr_init = o.lr_init;
    c.lr_min = o.lr_min;
    c.weights.alpha = o.alpha;
    c.weights.beta = o.beta;
    c.weights.lambda = o.lambda;
    c.weights.tau = o.tau;
    c.weights.mi_half = o.mi_half;
    c.weights.infonce_standard = o.infonce_standard;
    c.seed = seed;
    c.ablation = parse_ablation(o.ablation);
    c.model.input_dim = kFeatureDim;
    c.model.gin.num_layers = o.layers;
    c.model.gin.hidden_dim = o.hidden_dim;
    c.model.gin.epsilon = o.epsilon;
    c.model.gin.pooling = parse_pooling(o.pooling);
    c.checkpoint_path = o.checkpoint;
    try {
        c.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return c;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        auto x = std::stoull(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw UsageError("invalid value '" + v + "' for " + key);
}

// Resolved value of every option of `sub` (and the globals), as strings.
inline FlatConfig resolved_options(const CLI::App& app, const CLI::App& sub) {
    FlatConfig cfg;
    auto collect = [&cfg](const CLI::App& a) {
        for (const CLI::Option* opt : a.get_options()) {
            std::string name = opt->get_single_name();
            if (name.empty() || name == "help" || name == "config") continue;
            cfg[name] = opt->count() ? opt->results().back() : opt->get_default_str();
        }
    };
    collect(app);
    collect(sub);
    return cfg;
}

inline std::string flat_config_text(const FlatConfig& cfg) {
    std::string s;
    for (const auto& [k, v] : cfg) s += k + "=" + v + "\n";
    return s;
}

struct Manifest {
    std::string command;
    FlatConfig config;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    fs::path dir;

    nlohmann::ordered_json to_json(bool with_outputs) const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["seed"] = config.count("seed") ? nlohmann::ordered_json(std::stoull(config.at("seed"))) : nlohmann::ordered_json();
        j["config"] = nlohmann::ordered_json(config);
        auto in = nlohmann::ordered_json::object();
        for (const auto& p : inputs) in[p.string()] = sha256_file(p);
        j["inputs"] = std::move(in);
        auto out = nlohmann::ordered_json::object();
        for (const auto& p : outputs) out[p.string()] = with_outputs && fs::exists(p) ? sha256_file(p) : "";
        j["outputs"] = std::move(out);
        return j;
    }

    void write_initial() const {
        ensure_dir(dir);
        write_text(dir / "manifest.cfg", flat_config_text(config));
        write_text(dir / "manifest.json", to_json(false).dump(2) + "\n");
    }
    void write_final() const { write_text(dir / "manifest.json", to_json(true).dump(2) + "\n"); }
};

inline fs::path split_path(const fs::path& dir, const std::string& split) { return dir / (split + ".jsonl"); }

inline SplitBundle load_bundle(const fs::path& dir, std::vector<fs::path>* inputs) {
    if (!fs::exists(split_path(dir, "train"))) throw IoError("missing dataset file " + split_path(dir, "train").string());
    SplitBundle b;
    for (const char* split : kSplitNames) {
        auto p = split_path(dir, split);
        if (!fs::exists(p)) continue;
        split_by_name(b, split) = load_dataset(p.string());
        if (inputs) inputs->push_back(p);
    }
    return b;
}

inline std::vector<fs::path> dataset_inputs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const char* split : kSplitNames)
        if (fs::exists(split_path(dir, split))) out.push_back(split_path(dir, split));
    return out;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen(const Globals& g, const GenOptions& o, const FlatConfig& resolved, std::ostream& out) {
    SynthSpec spec;
    try {
        spec.num_train = o.num_train;
        spec.num_id_val = o.num_id_val;
        spec.num_id_test = o.num_id_test;
        spec.num_ood_val = o.num_ood_val;
        spec.num_ood_test = o.num_ood_test;
        spec.n_lo = o.n_lo;
        spec.n_hi = o.n_hi;
        spec.spurious_strength = o.r;
        spec.shift = parse_shift(o.shift);
        spec.signal_coeff = o.signal_coeff;
        spec.noise_std = o.noise_std;
        spec.motif_intercepts = {{"cycle5", o.intercept_cycle5}, {"house", o.intercept_house}, {"star4", o.intercept_star4}};
        spec.seed = g.seed;
        spec.validate();
    } catch (const ValidationError& e) {
        throw UsageError(e.what());
    }
    fs::path dir(g.out);
    Manifest m{"gen", resolved, {}, {}, dir};
    for (const char* split : kSplitNames) m.outputs.push_back(split_path(dir, split));
    m.outputs.push_back(dir / "stats.json");
    m.write_initial();

    auto bundle = generate(spec);
    for (const char* split : kSplitNames) save_dataset(split_by_name(bundle, split), split_path(dir, split).string());
    auto stats = split_stats(bundle);
    write_text(dir / "stats.json", stats_to_json(stats).dump(2) + "\n");
    m.write_final();

    out << "split      graphs  diag_mass  y_mean    y_std\n";
    for (const char* split : kSplitNames) {
        const auto& s = stats.at(split);
        out << std::left << std::setw(10) << split << std::right << std::setw(7) << s.count << std::fixed << std::setprecision(4) << std::setw(11)
            << s.diagonal_mass() << std::setw(9) << s.y_mean << std::setw(9) << s.y_std << "\n";
    }
    out.unsetf(std::ios::floatfield);
    out << "wrote " << dir.string() << "\n";
    return kExitOk;
}

inline void write_run_outputs(const RunRecord& rec, const ModelState& model, const fs::path& dir, const fs::path& checkpoint) {
    save_checkpoint(model, checkpoint.string());
    write_text(dir / "metrics.csv", metrics_csv(rec));
    write_text(dir / "run.json", run_summary_json(rec).dump(2) + "\n");
}

inline int cmd_train(const Globals& g, const TrainOptions& o, FlatConfig resolved, std::ostream& out) {
    const std::uint64_t model_seed = o.model_seed.empty() ? g.seed : parse_u64("model_seed", o.model_seed);
    TrainOptions opts = o;
    fs::path dir(g.out);
    if (opts.checkpoint.empty()) opts.checkpoint = (dir / "model.ckpt.json").string();
    TrainConfig cfg = make_train_config(opts, g.seed);
    resolved["model_seed"] = std::to_string(model_seed);

    Manifest m{"train", resolved, dataset_inputs(opts.data), {opts.checkpoint, dir / "metrics.csv", dir / "run.json"}, dir};
    m.write_initial();
    auto bundle = load_bundle(opts.data, nullptr);
    auto [model, rec] = train(cfg, bundle, model_seed);
    write_run_outputs(rec, model, dir, opts.checkpoint);
    m.write_final();

    const auto& last = rec.last();
    out << "epoch " << last.epoch << " train loss " << format_number(last.train_loss.total) << "\n";
    for (const auto& [split, e] : last.eval) out << split << " mae " << format_number(e.causal.mae) << " rmse " << format_number(e.causal.rmse) << "\n";
    out << "wrote " << opts.checkpoint << "\n";
    return kExitOk;
}

inline int cmd_eval(const Globals& g, const EvalOptions& o, const FlatConfig& resolved, std::ostream& out) {
    std::vector<Head> heads;
    if (o.head == "both") heads = {Head::causal, Head::confounding};
    else heads = {parse_head(o.head)};
    fs::path dir(g.out);
    std::vector<fs::path> inputs = dataset_inputs(o.data);
    if (!fs::exists(o.checkpoint)) throw IoError("missing checkpoint " + o.checkpoint);
    inputs.push_back(o.checkpoint);
    Manifest m{"eval", resolved, inputs, {dir / "eval.csv"}, dir};
    m.write_initial();

    ModelState model = load_checkpoint(o.checkpoint);
    auto bundle = load_bundle(o.data, nullptr);
    std::string csv = "split,head,mae,rmse,mask_quality\n";
    out << "split      head         mae                  rmse                 mask_quality\n";
    for (const char* split : kSplitNames) {
        const auto& graphs = split_by_name(bundle, split);
        if (graphs.empty()) continue;
        std::string mq = trainer_detail::has_motif_meta(graphs) ? format_number(mask_quality(model, graphs, o.batch_size)) : "";
        for (Head h : heads) {
            auto met = evaluate(model, graphs, h, o.batch_size);
            csv += std::string(split) + "," + to_string(h) + "," + format_number(met.mae) + "," + format_number(met.rmse) + "," + mq + "\n";
            out << std::left << std::setw(11) << split << std::setw(13) << to_string(h) << std::setw(21) << format_number(met.mae) << std::setw(21)
                << format_number(met.rmse) << mq << "\n";
        }
    }
    write_text(dir / "eval.csv", csv);
    m.write_final();
    return kExitOk;
}

inline int cmd_gradcheck(const Globals& g, const GradcheckOptions& o, const FlatConfig& resolved, std::ostream& out) {
    if (!(o.step > 0.0)) throw UsageError("step must be positive");
    fs::path dir(g.out);
    Manifest m{"gradcheck", resolved, {}, {dir / "gradcheck.csv"}, dir};
    m.write_initial();
    auto reports = run_checks(all_checks(), o.instances, g.seed, o.tolerance, o.step);
    bool all_ok = true;
    std::string csv = "check,instances,max_rel_error,max_norm_rel_error,status\n";
    out << std::left << std::setw(22) << "check" << std::setw(24) << "max_rel_error" << std::setw(24) << "norm_rel_error"
        << "status\n";
    for (const auto& r : reports) {
        all_ok = all_ok && r.passed;
        const char* status = r.passed ? "PASS" : "FAIL";
        csv += r.name + "," + std::to_string(r.instances) + "," + format_number(r.max_rel_error) + "," + format_number(r.max_norm_rel_error) + "," +
               status + "\n";
        out << std::left << std::setw(22) << r.name << std::setw(24) << format_number(r.max_rel_error) << std::setw(24)
            << format_number(r.max_norm_rel_error) << status << "\n";
    }
    write_text(dir / "gradcheck.csv", csv);
    m.write_final();
    out << (all_ok ? "all checks passed" : "some checks failed") << " (tolerance " << format_number(o.tolerance) << ")\n";
    return all_ok ? kExitOk : kExitFailure;
}

inline int cmd_ablate(const Globals& g, const AblateOptions& o, const FlatConfig& resolved, std::ostream& out) {
    auto seeds = parse_seed_list(o.seeds);
    auto ablations = parse_ablation_list(o.ablations);
    make_train_config(o.train, g.seed);  // validates the shared options
    fs::path dir(g.out);
    Manifest m{"ablate", resolved, dataset_inputs(o.train.data), {dir / "summary.csv"}, dir};
    for (auto a : ablations)
        for (auto s : seeds) {
            auto cell = dir / (to_string(a) + "_seed" + std::to_string(s));
            m.outputs.push_back(cell / "metrics.csv");
            m.outputs.push_back(cell / "model.ckpt.json");
        }
    m.write_initial();
    auto bundle = load_bundle(o.train.data, nullptr);

    std::string csv = "ablation,seed,ood_test_mae,id_test_mae,final_loss_reg,final_loss_ci,ood_test_mae_std,id_test_mae_std\n";
    std::string summary;
    for (auto a : ablations) {
        std::vector<double> ood, id;
        for (auto s : seeds) {
            TrainOptions t = o.train;
            t.ablation = to_string(a);
            auto cell = dir / (to_string(a) + "_seed" + std::to_string(s));
            ensure_dir(cell);
            t.checkpoint = (cell / "model.ckpt.json").string();
            TrainConfig cfg = make_train_config(t, s);
            auto [model, rec] = train(cfg, bundle, s);
            write_run_outputs(rec, model, cell, t.checkpoint);
            const double ood_mae = rec.ood_selection.epoch ? rec.ood_selection.test.mae : std::nan("");
            const double id_mae = rec.id_selection.epoch ? rec.id_selection.test.mae : std::nan("");
            ood.push_back(ood_mae);
            id.push_back(id_mae);
            csv += to_string(a) + "," + std::to_string(s) + "," + format_number(ood_mae) + "," + format_number(id_mae) + "," +
                   format_number(rec.last().train_loss.l_reg) + "," + format_number(rec.last().train_loss.l_ci) + ",,\n";
            out << to_string(a) << " seed " << s << ": ood_test mae " << format_number(ood_mae) << ", id_test mae " << format_number(id_mae) << "\n";
        }
        auto mean_std = [](const std::vector<double>& v) {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            return std::make_pair(mean, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0);
        };
        auto [om, os] = mean_std(ood);
        auto [im, is] = mean_std(id);
        summary += to_string(a) + ",mean," + format_number(om) + "," + format_number(im) + ",,," + format_number(os) + "," + format_number(is) + "\n";
        out << to_string(a) << " mean ood_test mae " << format_number(om) << " +- " << format_number(os) << "\n";
    }
    write_text(dir / "summary.csv", csv + summary);
    m.write_final();
    return kExitOk;
}

}  // namespace cli_detail

// Runs the command line `args` (without the program name). Returns the
// process exit code: 0 success, 1 runtime failure, 2 usage error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    std::vector<std::string> argv;
    try {
        argv = splice_config(args);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }

    CLI::App app{"Causal/confounding disentangled graph regression"};
    app.name("cgr");
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    app.add_option("--config", "Flat key=value config file; flags override it");

    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Output directory");

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate the synthetic dataset");
    gen_cmd->add_option("--shift", gen.shift, "concept | covariate | none")->check(CLI::IsMember({"concept", "covariate", "none"}));
    gen_cmd->add_option("--r", gen.r, "Spurious strength in [0, 1]")->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--num_train", gen.num_train);
    gen_cmd->add_option("--num_id_val", gen.num_id_val);
    gen_cmd->add_option("--num_id_test", gen.num_id_test);
    gen_cmd->add_option("--num_ood_val", gen.num_ood_val);
    gen_cmd->add_option("--num_ood_test", gen.num_ood_test);
    gen_cmd->add_option("--n_lo", gen.n_lo, "Smallest base graph")->check(CLI::Range(std::size_t{4}, std::size_t{100000}));
    gen_cmd->add_option("--n_hi", gen.n_hi, "Largest base graph")->check(CLI::Range(std::size_t{4}, std::size_t{100000}));
    gen_cmd->add_option("--signal_coeff", gen.signal_coeff);
    gen_cmd->add_option("--noise_std", gen.noise_std)->check(CLI::NonNegativeNumber);
    gen_cmd->add_option("--intercept_cycle5", gen.intercept_cycle5);
    gen_cmd->add_option("--intercept_house", gen.intercept_house);
    gen_cmd->add_option("--intercept_star4", gen.intercept_star4);

    TrainOptions train_opts;
    auto* train_cmd = app.add_subcommand("train", "Train one model");
    add_train_options(train_cmd, train_opts, true);

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on every split");
    eval_cmd->add_option("--data", eval.data)->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
    eval_cmd->add_option("--head", eval.head, "causal | confounding | both")->check(CLI::IsMember({"causal", "confounding", "both"}));
    eval_cmd->add_option("--batch_size", eval.batch_size)->check(CLI::PositiveNumber);

    GradcheckOptions gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every primitive and the full objective");
    gc_cmd->add_option("--instances", gc.instances)->check(CLI::PositiveNumber);
    gc_cmd->add_option("--step", gc.step)->check(CLI::PositiveNumber);
    gc_cmd->add_option("--tolerance", gc.tolerance)->check(CLI::PositiveNumber);

    AblateOptions ab;
    auto* ab_cmd = app.add_subcommand("ablate", "Train every ablation for several seeds");
    add_train_options(ab_cmd, ab.train, false);
    ab_cmd->add_option("--seeds", ab.seeds, "Comma-separated seeds");
    ab_cmd->add_option("--ablations", ab.ablations, "Comma-separated ablations");

    try {
        std::vector<std::string> reversed(argv.rbegin(), argv.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen(g, gen, resolved_options(app, *gen_cmd), out);
        if (train_cmd->parsed()) return cmd_train(g, train_opts, resolved_options(app, *train_cmd), out);
        if (eval_cmd->parsed()) return cmd_eval(g, eval, resolved_options(app, *eval_cmd), out);
        if (gc_cmd->parsed()) return cmd_gradcheck(g, gc, resolved_options(app, *gc_cmd), out);
        if (ab_cmd->parsed()) return cmd_ablate(g, ab, resolved_options(app, *ab_cmd), out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace cgr
