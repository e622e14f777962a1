#include "graphcal/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "graphcal/bundle.hpp"
#include "graphcal/calibrate.hpp"
#include "graphcal/error.hpp"
#include "graphcal/metrics.hpp"
#include "graphcal/theory.hpp"

namespace graphcal {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig::RunConfig() : grid(default_alpha_beta_grid()) {}

namespace {

template <typename T>
void read_key(const json& doc, const char* key, T& target) {
    if (doc.contains(key)) target = doc[key].get<T>();
}

void reject_unknown(const json& doc, std::initializer_list<const char*> known, const char* where) {
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, value] : doc.items()) {
        if (allowed.count(key) == 0) {
            throw ValidationError(std::string("unknown key \"") + key + "\" in " + where);
        }
    }
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    reject_unknown(doc,
                   {"bundle", "out", "model", "method", "grid", "ece_bins", "sweep", "synth",
                    "splits", "seed"},
                   "config");
    RunConfig config;
    try {
        if (doc.contains("bundle")) config.bundle = doc["bundle"].get<std::string>();
        if (doc.contains("out")) config.out = doc["out"].get<std::string>();
        if (doc.contains("model")) config.model = model_config_from_json(doc["model"], config.model);
        read_key(doc, "method", config.method);
        read_key(doc, "grid", config.grid);
        read_key(doc, "ece_bins", config.ece_bins);
        read_key(doc, "seed", config.seed);
        if (doc.contains("sweep")) {
            const json& s = doc["sweep"];
            reject_unknown(s, {"mode", "lambdas", "low", "high", "iterations"}, "sweep");
            read_key(s, "mode", config.sweep_mode);
            read_key(s, "lambdas", config.sweep_lambdas);
            read_key(s, "low", config.search_low);
            read_key(s, "high", config.search_high);
            read_key(s, "iterations", config.search_iterations);
        }
        if (doc.contains("synth")) {
            const json& s = doc["synth"];
            reject_unknown(s,
                           {"classes", "nodes_per_class", "intra_edge_prob", "inter_edge_prob",
                            "feature_dim", "class_mean_separation", "feature_noise_std"},
                           "synth");
            read_key(s, "classes", config.synth.classes);
            read_key(s, "nodes_per_class", config.synth.nodes_per_class);
            read_key(s, "intra_edge_prob", config.synth.intra_edge_prob);
            read_key(s, "inter_edge_prob", config.synth.inter_edge_prob);
            read_key(s, "feature_dim", config.synth.feature_dim);
            read_key(s, "class_mean_separation", config.synth.class_mean_separation);
            read_key(s, "feature_noise_std", config.synth.feature_noise_std);
        }
        if (doc.contains("splits")) {
            const json& s = doc["splits"];
            reject_unknown(s, {"labels_per_class", "n_valid", "n_test"}, "splits");
            read_key(s, "labels_per_class", config.labels_per_class);
            read_key(s, "n_valid", config.n_valid);
            read_key(s, "n_test", config.n_test);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return config;
}

json to_json(const RunConfig& config) {
    return json{{"bundle", config.bundle.string()},
                {"out", config.out.string()},
                {"model", to_json(config.model)},
                {"method", config.method},
                {"grid", config.grid},
                {"ece_bins", config.ece_bins},
                {"sweep",
                 {{"mode", config.sweep_mode},
                  {"lambdas", config.sweep_lambdas},
                  {"low", config.search_low},
                  {"high", config.search_high},
                  {"iterations", config.search_iterations}}},
                {"synth",
                 {{"classes", config.synth.classes},
                  {"nodes_per_class", config.synth.nodes_per_class},
                  {"intra_edge_prob", config.synth.intra_edge_prob},
                  {"inter_edge_prob", config.synth.inter_edge_prob},
                  {"feature_dim", config.synth.feature_dim},
                  {"class_mean_separation", config.synth.class_mean_separation},
                  {"feature_noise_std", config.synth.feature_noise_std}}},
                {"splits",
                 {{"labels_per_class", config.labels_per_class},
                  {"n_valid", config.n_valid},
                  {"n_test", config.n_test}}},
                {"seed", config.seed}};
}

void validate(const RunConfig& config) {
    validate(config.model);
    if (config.ece_bins == 0) throw ValidationError("ece_bins must be at least 1");
    if (config.method != "scar" && config.method != "ts" && config.method != "both") {
        throw ValidationError("method must be one of scar, ts, both");
    }
    if (config.sweep_mode != "list" && config.sweep_mode != "binary-search") {
        throw ValidationError("sweep mode must be list or binary-search");
    }
    if (config.grid.empty()) throw ValidationError("calibration grid is empty");
    for (double g : config.grid) {
        if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("grid values must lie in [0, 1]");
    }
    validate(config.synth);
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    out << doc.dump(2) << "\n";
    if (!out) throw Error("failed to write " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

void append_timing(const fs::path& dir, const std::string& what, double seconds) {
    std::ofstream(dir / "timing.log", std::ios::app) << what << " " << num(seconds) << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void require_bundle(const RunConfig& config) {
    if (config.bundle.empty()) throw ValidationError("no bundle given (--bundle or \"bundle\")");
    if (!fs::is_directory(config.bundle)) {
        throw ValidationError("bundle directory does not exist: " + config.bundle.string());
    }
}

std::vector<int> labels_of(const Graph& graph, std::span<const NodeId> nodes) {
    std::vector<int> out;
    out.reserve(nodes.size());
    for (NodeId v : nodes) out.push_back(graph.labels[v]);
    return out;
}

json split_summary(const DenseMatrix& probs, const Graph& graph, std::span<const NodeId> nodes,
                   std::size_t bins) {
    const Predictions preds = predict(probs);
    return {{"ece", masked_ece(probs, graph.labels, nodes, bins)},
            {"accuracy", accuracy(preds.labels, graph.labels, nodes)}};
}

DenseMatrix read_feature_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    const std::string name = path.filename().string();
    std::vector<double> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        for (char& ch : line) {
            if (ch == ',') ch = ' ';
        }
        std::istringstream ls(line);
        std::size_t count = 0;
        std::string token;
        while (ls >> token) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(token, &used));
                if (used != token.size()) throw std::invalid_argument(token);
            } catch (const std::exception&) {
                throw FormatError(name + ":" + std::to_string(lineno) + ": bad number \"" +
                                  token + "\"");
            }
            ++count;
        }
        if (rows == 0) cols = count;
        if (count != cols) {
            throw DimensionMismatch(name + ":" + std::to_string(lineno) + ": expected " +
                                    std::to_string(cols) + " values, found " +
                                    std::to_string(count));
        }
        ++rows;
    }
    if (rows == 0) throw FormatError(name + ": no feature rows");
    return DenseMatrix(rows, cols, std::move(values));
}

std::vector<std::string> split_names(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

struct IngestOptions {
    fs::path edges;
    fs::path features;
    fs::path labels;
    fs::path splits;
    std::size_t classes = 0;
    std::string names;
};

int cmd_ingest(const RunConfig& config, const IngestOptions& opt, std::ostream& out,
               std::ostream& err) {
    for (const auto& p : {opt.edges, opt.features, opt.labels}) {
        if (!fs::is_regular_file(p)) throw ValidationError("input file does not exist: " + p.string());
    }
    DenseMatrix features = read_feature_table(opt.features);
    const std::size_t n = features.rows();
    std::vector<int> labels = read_label_list(opt.labels);
    if (labels.size() != n) {
        throw DimensionMismatch("dimension mismatch: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " feature rows");
    }
    std::size_t classes = opt.classes;
    if (classes == 0) {
        for (int y : labels) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
    }
    auto cleaned = canonicalize_edges(read_edge_list(opt.edges, n), n);
    if (cleaned.duplicates > 0) {
        err << "warning: dropped " << cleaned.duplicates << " duplicate edge(s)\n";
    }
    if (cleaned.self_loops > 0) {
        err << "warning: dropped " << cleaned.self_loops << " self-loop(s)\n";
    }
    Graph graph = make_graph(std::move(features), std::move(labels), classes,
                             std::move(cleaned.edges));

    SplitMasks splits;
    if (!opt.splits.empty()) {
        const json doc = read_json_file(opt.splits);
        try {
            splits.train = doc.at("train").get<std::vector<NodeId>>();
            splits.valid = doc.at("valid").get<std::vector<NodeId>>();
            splits.test = doc.at("test").get<std::vector<NodeId>>();
            read_key(doc, "labels_per_class", splits.labels_per_class);
        } catch (const json::exception& e) {
            throw ValidationError(opt.splits.string() + ": " + e.what());
        }
        validate_splits(splits, graph.n);
    } else {
        splits = make_splits(graph, config.labels_per_class, config.n_valid, config.n_test,
                             config.seed);
    }
    std::vector<std::string> names = split_names(opt.names);
    if (!names.empty() && names.size() != graph.c) {
        throw ValidationError("--names lists " + std::to_string(names.size()) +
                              " classes, labels use " + std::to_string(graph.c));
    }
    save_bundle(config.out, graph, splits, names);
    out << "bundle written to " << config.out.string() << ": n=" << graph.n << " d=" << graph.d
        << " c=" << graph.c << " edges=" << graph.edges.size() << "\n";
    return kExitOk;
}

int cmd_synth(const RunConfig& config, std::ostream& out) {
    const Graph graph = generate_csbm(config.synth);
    const SplitMasks splits =
        make_splits(graph, config.labels_per_class, config.n_valid, config.n_test, config.seed);
    save_bundle(config.out, graph, splits);
    out << "synthetic bundle written to " << config.out.string() << ": n=" << graph.n
        << " edges=" << graph.edges.size() << "\n";
    return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
    require_bundle(config);
    const GraphBundle bundle = load_bundle(config.bundle);
    const auto adj = normalize_adjacency(bundle.graph.adjacency);
    const auto start = std::chrono::steady_clock::now();
    const TrainResult result = train(bundle.graph, adj, bundle.splits, config.model);
    const double elapsed = seconds_since(start);

    save_checkpoint(result.params, config.model, config.out / "model.ckpt");
    save_eval_cache(result.cache, config.out / "cache.bin");
    json report = to_json(result.report);
    report["config"] = to_json(config.model);
    report["test"] = split_summary(result.cache.probs, bundle.graph, bundle.splits.test,
                                   config.ece_bins);
    write_json(config.out / "train_report.json", report);
    write_predictions_csv(config.out / "predictions.csv", result.cache.probs);
    append_timing(config.out, "train_seconds", elapsed);
    out << "trained " << result.report.epochs.size() << " epochs (best " << result.report.best_epoch
        << "), test accuracy " << report["test"]["accuracy"].get<double>() << ", test ECE "
        << report["test"]["ece"].get<double>() << "\n";
    return kExitOk;
}

struct CalibrateOptions {
    fs::path model_dir;
};

int cmd_calibrate(const RunConfig& config, const CalibrateOptions& opt, std::ostream& out) {
    require_bundle(config);
    const fs::path model_dir = opt.model_dir.empty() ? config.out : opt.model_dir;
    const fs::path ckpt_path = model_dir / "model.ckpt";
    const fs::path cache_path = model_dir / "cache.bin";
    if (!fs::is_regular_file(ckpt_path)) {
        throw ValidationError("missing checkpoint: " + ckpt_path.string());
    }
    if (!fs::is_regular_file(cache_path)) {
        throw ValidationError("missing cache: " + cache_path.string());
    }
    const GraphBundle bundle = load_bundle(config.bundle);
    const Graph& graph = bundle.graph;
    const SplitMasks& splits = bundle.splits;
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const EvalCache cache = load_eval_cache(cache_path);
    const DenseMatrix& weights = ckpt.params.final_layer();
    if (cache.logits.rows() != graph.n || cache.logits.cols() != graph.c ||
        ckpt.num_classes != graph.c || weights.rows() != cache.final_aggregate.cols()) {
        throw DimensionMismatch("dimension mismatch: model and cache do not fit this bundle");
    }

    const DenseMatrix probs = softmax_rows(cache.logits);
    json report;
    report["method"] = config.method;
    report["ece_bins"] = config.ece_bins;
    report["uncalibrated"] = {
        {"valid", split_summary(probs, graph, splits.valid, config.ece_bins)},
        {"test", split_summary(probs, graph, splits.test, config.ece_bins)}};

    if (config.method != "ts") {
        const AlphaBetaSearch search =
            search_alpha_beta(cache.final_aggregate, cache.logits, weights, graph, splits,
                              config.grid, config.ece_bins);
        const auto start = std::chrono::steady_clock::now();
        const CalibratedOutput calibrated = scar_node_level(
            cache.final_aggregate, cache.logits, weights, predict(probs), search.plan, splits.test);
        append_timing(config.out, "scar_node_level_seconds", seconds_since(start));
        report["scar"] = {
            {"alpha", search.plan.alpha},
            {"beta", search.plan.beta},
            {"candidates", search.candidates},
            {"near_test_nodes", search.plan.partition.near.size()},
            {"far_test_nodes", search.plan.partition.far.size()},
            {"valid_ece_before", search.valid_ece_before},
            {"valid_ece_after", search.valid_ece_after},
            {"test_ece_before", report["uncalibrated"]["test"]["ece"]},
            {"test_ece_after",
             masked_ece(calibrated.probs, graph.labels, splits.test, config.ece_bins)},
            {"test_accuracy_after",
             accuracy(calibrated.predictions.labels, graph.labels, splits.test)},
            {"label_flips", calibrated.label_flips}};
        write_predictions_csv(config.out / "predictions_scar.csv", calibrated.probs);
    }
    if (config.method != "scar") {
        const TemperatureModel ts = fit_temperature(gather_rows(cache.logits, splits.valid),
                                                    labels_of(graph, splits.valid));
        const DenseMatrix scaled = apply_temperature(cache.logits, ts.temperature);
        report["ts"] = {
            {"temperature", ts.temperature},
            {"valid_ece_before", report["uncalibrated"]["valid"]["ece"]},
            {"valid_ece_after", masked_ece(scaled, graph.labels, splits.valid, config.ece_bins)},
            {"test_ece_before", report["uncalibrated"]["test"]["ece"]},
            {"test_ece_after", masked_ece(scaled, graph.labels, splits.test, config.ece_bins)}};
        write_predictions_csv(config.out / "predictions_ts.csv", scaled);
    }
    write_json(config.out / "calibration.json", report);
    if (report.contains("scar")) {
        out << "scar: alpha=" << report["scar"]["alpha"].get<double>()
            << " beta=" << report["scar"]["beta"].get<double>() << " test ECE "
            << report["scar"]["test_ece_before"].get<double>() << " -> "
            << report["scar"]["test_ece_after"].get<double>() << "\n";
    }
    if (report.contains("ts")) {
        out << "ts: T=" << report["ts"]["temperature"].get<double>() << " test ECE "
            << report["ts"]["test_ece_before"].get<double>() << " -> "
            << report["ts"]["test_ece_after"].get<double>() << "\n";
    }
    return kExitOk;
}

struct EvaluateOptions {
    fs::path predictions;
};

int cmd_evaluate(const RunConfig& config, const EvaluateOptions& opt, std::ostream& out) {
    require_bundle(config);
    if (!fs::is_regular_file(opt.predictions)) {
        throw ValidationError("predictions file does not exist: " + opt.predictions.string());
    }
    const GraphBundle bundle = load_bundle(config.bundle);
    const Graph& graph = bundle.graph;
    const std::vector<NodeId>& test = bundle.splits.test;
    if (test.empty()) throw ValidationError("bundle has an empty test split");
    const PredictionTable table = read_predictions_csv(opt.predictions, graph.n);
    if (table.probs.cols() != graph.c) {
        throw DimensionMismatch("dimension mismatch: predictions have " +
                                std::to_string(table.probs.cols()) + " classes, bundle has " +
                                std::to_string(graph.c));
    }

    std::vector<double> conf;
    std::vector<bool> correct;
    for (NodeId v : test) {
        conf.push_back(table.confidence[v]);
        correct.push_back(table.predicted[v] == graph.labels[v]);
    }
    const EceReport report = ece(conf, correct, config.ece_bins);
    const HistogramData hist = confidence_histogram(conf, correct, config.ece_bins);
    const json metrics = {{"ece", report.ece},
                          {"accuracy", accuracy(table.predicted, graph.labels, test)},
                          {"nll", nll(table.probs, graph.labels, test)},
                          {"n_test", test.size()},
                          {"M", config.ece_bins}};
    write_json(config.out / "metrics.json", metrics);

    std::ofstream rel(config.out / "reliability.csv");
    rel << "bin_low,bin_high,count,conf,acc\n";
    for (const auto& b : report.bins) {
        rel << num(b.lower) << "," << num(b.upper) << "," << b.count << "," << num(b.confidence)
            << "," << num(b.accuracy) << "\n";
    }
    std::ofstream his(config.out / "histogram.csv");
    his << "bin_low,bin_high,density_correct,density_incorrect\n";
    for (std::size_t m = 0; m + 1 < hist.edges.size(); ++m) {
        his << num(hist.edges[m]) << "," << num(hist.edges[m + 1]) << ","
            << num(hist.density_correct[m]) << "," << num(hist.density_incorrect[m]) << "\n";
    }
    if (!rel || !his) throw Error("failed to write evaluation outputs");
    out << "ECE " << report.ece << ", accuracy " << metrics["accuracy"].get<double>() << " over "
        << test.size() << " test nodes\n";
    return kExitOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& out) {
    require_bundle(config);
    const GraphBundle bundle = load_bundle(config.bundle);
    const auto adj = normalize_adjacency(bundle.graph.adjacency);
    if (config.sweep_mode == "list") {
        const auto sweep = centroid_distance_sweep(bundle.graph, adj, bundle.splits, config.model,
                                                   config.sweep_lambdas, config.ece_bins);
        std::ofstream csv(config.out / "sweep.csv");
        csv << "lambda,mean_centroid_distance,accuracy,ece\n";
        for (std::size_t i = 0; i < sweep.lambdas.size(); ++i) {
            csv << num(sweep.lambdas[i]) << "," << num(sweep.mean_distances[i]) << ","
                << num(sweep.accuracies[i]) << "," << num(sweep.eces[i]) << "\n";
            out << "lambda " << sweep.lambdas[i] << ": centroid distance "
                << sweep.mean_distances[i] << ", accuracy " << sweep.accuracies[i] << ", ECE "
                << sweep.eces[i] << "\n";
        }
        if (!csv) throw Error("failed to write sweep.csv");
        return kExitOk;
    }
    const DecaySearch search =
        search_final_decay(bundle.graph, adj, bundle.splits, config.model, config.search_low,
                           config.search_high, config.search_iterations, config.ece_bins);
    std::ofstream csv(config.out / "decay_search.csv");
    csv << "lambda,valid_ece,test_ece,accuracy\n";
    for (const auto& e : search.evaluations) {
        csv << num(e.final_decay) << "," << num(e.valid_ece) << "," << num(e.test_ece) << ","
            << num(e.test_accuracy) << "\n";
    }
    if (!csv) throw Error("failed to write decay_search.csv");
    write_json(config.out / "decay_search.json", {{"low", config.search_low},
                                                  {"high", config.search_high},
                                                  {"iterations", config.search_iterations},
                                                  {"best_final_decay", search.best_decay},
                                                  {"best_valid_ece", search.best_valid_ece}});
    out << "best final-layer decay " << search.best_decay << " (validation ECE "
        << search.best_valid_ece << ")\n";
    return kExitOk;
}

struct VerifyOptions {
    bool self_test = false;
    std::size_t instances = 1000;
};

int cmd_verify(const RunConfig& config, const VerifyOptions& opt, std::ostream& out) {
    TheorySuiteOptions options;
    options.seed = config.seed;
    options.theorem1_instances = opt.instances;
    if (opt.self_test) options.tau_offset = 1e-3;
    const TheoryReport report = run_theory_suite(options);
    json doc = to_json(report);
    doc["self_test"] = opt.self_test;
    write_json(config.out / "theory_report.json", doc);
    for (const auto& c : report.checks) {
        out << (c.passed ? "PASS " : "FAIL ") << c.name << " residual=" << c.residual
            << " tolerance=" << c.tolerance << "\n";
    }
    return report.all_passed() ? kExitOk : kExitRuntime;
}

}  // namespace

void write_predictions_csv(const fs::path& path, const DenseMatrix& probs) {
    const Predictions preds = predict(probs);
    std::ofstream out(path);
    out << "node_id,predicted_class,confidence";
    for (std::size_t k = 0; k < probs.cols(); ++k) out << ",p" << k;
    out << "\n";
    for (std::size_t v = 0; v < probs.rows(); ++v) {
        out << v << "," << preds.labels[v] << "," << num(preds.confidence[v]);
        for (double p : probs.row(v)) out << "," << num(p);
        out << "\n";
    }
    if (!out) throw Error("failed to write " + path.string());
}

PredictionTable read_predictions_csv(const fs::path& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty predictions file");
    const auto header_fields = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (header_fields < 4) throw FormatError(path.string() + ": header has no probability columns");
    const std::size_t c = header_fields - 3;

    PredictionTable table;
    table.predicted.assign(n, -1);
    table.confidence.assign(n, 0.0);
    table.probs = DenseMatrix(n, c);
    std::vector<char> seen(n, 0);
    std::size_t rows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != c + 3) {
            throw FormatError(path.filename().string() + ":" + std::to_string(lineno) +
                              ": expected " + std::to_string(c + 3) + " fields");
        }
        try {
            const unsigned long long id = std::stoull(fields[0]);
            if (id >= n) {
                throw DimensionMismatch("prediction/node-count mismatch: node " +
                                        std::to_string(id) + " at line " +
                                        std::to_string(lineno) + " but the graph has n=" +
                                        std::to_string(n));
            }
            if (seen[id] != 0) {
                throw ValidationError("node " + std::to_string(id) + " listed twice at line " +
                                      std::to_string(lineno));
            }
            seen[id] = 1;
            table.predicted[id] = std::stoi(fields[1]);
            table.confidence[id] = std::stod(fields[2]);
            for (std::size_t k = 0; k < c; ++k) table.probs(id, k) = std::stod(fields[3 + k]);
        } catch (const std::invalid_argument&) {
            throw FormatError(path.filename().string() + ":" + std::to_string(lineno) +
                              ": malformed number");
        } catch (const std::out_of_range&) {
            throw FormatError(path.filename().string() + ":" + std::to_string(lineno) +
                              ": number out of range");
        }
        ++rows;
    }
    if (rows != n) {
        throw DimensionMismatch("prediction/node-count mismatch: " + std::to_string(rows) +
                                " rows for a graph with n=" + std::to_string(n));
    }
    for (double p : table.confidence) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("confidence outside [0, 1]");
    }
    return table;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Graph neural network training and confidence calibration", "graphcal"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string bundle_dir;
    std::optional<std::size_t> bins;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_option("--out", out_dir, "Output directory (overrides the config)");

    IngestOptions ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Convert text inputs into a graph bundle");
    ingest_cmd->add_option("--edges", ingest.edges, "Edge list, one \"u v\" pair per line")->required();
    ingest_cmd->add_option("--features", ingest.features, "Feature rows, whitespace or comma separated")->required();
    ingest_cmd->add_option("--labels", ingest.labels, "One class index per line")->required();
    ingest_cmd->add_option("--splits", ingest.splits, "splits.json; random splits when omitted");
    ingest_cmd->add_option("--classes", ingest.classes, "Class count (default: max label + 1)");
    ingest_cmd->add_option("--names", ingest.names, "Comma-separated class names");

    auto* synth_cmd = app.add_subcommand("synth", "Write a contextual SBM graph bundle");
    std::optional<std::size_t> classes, per_class, dim;
    std::optional<double> p_in, q_out, separation, noise;
    synth_cmd->add_option("--classes", classes);
    synth_cmd->add_option("--nodes-per-class", per_class);
    synth_cmd->add_option("--p", p_in, "Intra-class edge probability");
    synth_cmd->add_option("--q", q_out, "Inter-class edge probability");
    synth_cmd->add_option("--dim", dim, "Feature dimension");
    synth_cmd->add_option("--separation", separation, "Distance between class means");
    synth_cmd->add_option("--noise", noise, "Feature noise standard deviation");

    std::optional<std::size_t> lpc, n_valid, n_test;
    for (auto* cmd : {ingest_cmd, synth_cmd}) {
        cmd->add_option("--labels-per-class", lpc);
        cmd->add_option("--valid", n_valid);
        cmd->add_option("--test", n_test);
    }

    auto* train_cmd = app.add_subcommand("train", "Train a GCN and write checkpoint and cache");
    CalibrateOptions calibrate;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit SCAR and/or temperature scaling");
    std::string method;
    std::vector<double> grid;
    calibrate_cmd->add_option("--model", calibrate.model_dir, "Directory with model.ckpt and cache.bin");
    calibrate_cmd->add_option("--method", method, "scar, ts or both");
    calibrate_cmd->add_option("--grid", grid, "alpha/beta candidates")->delimiter(',');

    EvaluateOptions evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a predictions file on the test split");
    evaluate_cmd->add_option("--predictions", evaluate.predictions)->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "Final-layer weight decay sweep or search");
    std::string mode;
    std::vector<double> lambdas;
    std::optional<double> low, high;
    std::optional<std::size_t> iterations;
    sweep_cmd->add_option("--mode", mode, "list or binary-search");
    sweep_cmd->add_option("--lambdas", lambdas, "Strictly decreasing list")->delimiter(',');
    sweep_cmd->add_option("--low", low);
    sweep_cmd->add_option("--high", high);
    sweep_cmd->add_option("--iterations", iterations);

    VerifyOptions verify;
    auto* verify_cmd = app.add_subcommand("verify", "Numerically check the theoretical results");
    verify_cmd->add_flag("--self-test", verify.self_test, "Corrupt tau to confirm the check fails");
    verify_cmd->add_option("--instances", verify.instances, "Random temperature-update instances");

    for (auto* cmd : {train_cmd, calibrate_cmd, evaluate_cmd, sweep_cmd}) {
        cmd->add_option("--bundle", bundle_dir, "Graph bundle directory");
    }
    for (auto* cmd : {train_cmd, calibrate_cmd, evaluate_cmd, sweep_cmd}) {
        cmd->add_option("--bins", bins, "ECE bin count");
    }

    std::vector<std::string> argv_storage{"graphcal"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) {
            if (!fs::is_regular_file(config_path)) {
                throw ValidationError("config file does not exist: " + config_path);
            }
            config = run_config_from_json(read_json_file(config_path));
        }
        if (seed) config.seed = *seed;
        if (!out_dir.empty()) config.out = out_dir;
        if (!bundle_dir.empty()) config.bundle = bundle_dir;
        if (bins) config.ece_bins = *bins;
        if (!method.empty()) config.method = method;
        if (!grid.empty()) config.grid = grid;
        if (!mode.empty()) config.sweep_mode = mode;
        if (!lambdas.empty()) config.sweep_lambdas = lambdas;
        if (low) config.search_low = *low;
        if (high) config.search_high = *high;
        if (iterations) config.search_iterations = *iterations;
        if (classes) config.synth.classes = *classes;
        if (per_class) config.synth.nodes_per_class = *per_class;
        if (p_in) config.synth.intra_edge_prob = *p_in;
        if (q_out) config.synth.inter_edge_prob = *q_out;
        if (dim) config.synth.feature_dim = *dim;
        if (separation) config.synth.class_mean_separation = *separation;
        if (noise) config.synth.feature_noise_std = *noise;
        if (lpc) config.labels_per_class = *lpc;
        if (n_valid) config.n_valid = *n_valid;
        if (n_test) config.n_test = *n_test;
        config.model.seed = config.seed;
        config.synth.seed = config.seed;
        validate(config);
        fs::create_directories(config.out);

        if (ingest_cmd->parsed()) return cmd_ingest(config, ingest, out, err);
        if (synth_cmd->parsed()) return cmd_synth(config, out);
        if (train_cmd->parsed()) return cmd_train(config, out);
        if (calibrate_cmd->parsed()) return cmd_calibrate(config, calibrate, out);
        if (evaluate_cmd->parsed()) return cmd_evaluate(config, evaluate, out);
        if (sweep_cmd->parsed()) return cmd_sweep(config, out);
        return cmd_verify(config, verify, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace graphcal
