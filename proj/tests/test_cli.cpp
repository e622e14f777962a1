#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "graphcal/bundle.hpp"
#include "graphcal/cli.hpp"
#include "graphcal/error.hpp"
#include "support.hpp"

using namespace graphcal;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        rows.push_back(fields);
    }
    return rows;
}

// A small synthetic bundle plus a short-training config, shared by the tests.
struct Workspace {
    testing::TempDir dir{"cli"};
    std::string bundle = (dir / "bundle").string();
    std::string config = (dir / "config.json").string();

    Workspace() {
        std::ofstream(config) << R"({"model": {"hidden_dim": 16, "max_epochs": 40}})";
        const Run r = run({"synth", "--out", bundle, "--classes", "3", "--nodes-per-class", "40",
                           "--dim", "9", "--labels-per-class", "5", "--valid", "30", "--test",
                           "40"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    Run train(const std::string& out_dir) const {
        return run({"--config", config, "--out", out_dir, "train", "--bundle", bundle});
    }
};

}  // namespace

TEST_SUITE("ingest") {
    TEST_CASE("text inputs become a bundle that loads back") {
        const testing::TempDir dir("cli_ingest");
        std::ofstream(dir / "edges.txt") << "0 1\n1 2\n2 3\n3 0\n";
        std::ofstream(dir / "features.txt") << "1 0\n0,1\n1 1\n0.5 0.25\n";
        std::ofstream(dir / "labels.txt") << "0\n1\n0\n1\n";
        std::ofstream(dir / "splits.json") << R"({"train": [0, 1], "valid": [2], "test": [3]})";
        const Run r = run({"--out", (dir / "b").string(), "ingest", "--edges",
                           (dir / "edges.txt").string(), "--features",
                           (dir / "features.txt").string(), "--labels",
                           (dir / "labels.txt").string(), "--splits", (dir / "splits.json").string(),
                           "--names", "red,blue"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(r.err.empty());
        const GraphBundle b = load_bundle(dir / "b");
        CHECK(b.graph.n == 4);
        CHECK(b.graph.d == 2);
        CHECK(b.graph.c == 2);
        CHECK(b.graph.edges == std::vector<Edge>{{0, 1}, {0, 3}, {1, 2}, {2, 3}});
        CHECK(b.graph.features(3, 1) == 0.25);
        CHECK(b.splits.test == std::vector<NodeId>{3});
        CHECK(b.class_names == std::vector<std::string>{"red", "blue"});
    }

    TEST_CASE("duplicate edges produce a warning, bad lines an error") {
        const testing::TempDir dir("cli_ingest_bad");
        std::ofstream(dir / "features.txt") << "1\n2\n3\n";
        std::ofstream(dir / "labels.txt") << "0\n1\n0\n";
        std::ofstream(dir / "edges.txt") << "0 1\n1 0\n2 2\n";
        std::vector<std::string> args{"--out", (dir / "b").string(), "ingest",
                                      "--edges", (dir / "edges.txt").string(),
                                      "--features", (dir / "features.txt").string(),
                                      "--labels", (dir / "labels.txt").string(),
                                      "--labels-per-class", "1", "--valid", "1", "--test", "0"};
        Run r = run(args);
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(r.err.find("1 duplicate edge") != std::string::npos);
        CHECK(r.err.find("1 self-loop") != std::string::npos);

        std::ofstream(dir / "edges.txt") << "0 1\n1 two\n";
        r = run(args);
        CHECK(r.code == kExitInvalid);
        CHECK(r.err.find("edges.txt:2") != std::string::npos);

        std::ofstream(dir / "edges.txt") << "0 1\n";
        std::ofstream(dir / "labels.txt") << "0\n1\n";
        r = run(args);
        CHECK(r.code == kExitInvalid);
        CHECK(r.err.find("dimension mismatch") != std::string::npos);
    }
}

TEST_SUITE("train") {
    TEST_CASE("same seed, same outputs") {
        const Workspace ws;
        REQUIRE(ws.train(ws.path("a")).code == 0);
        REQUIRE(ws.train(ws.path("b")).code == 0);
        for (const char* name : {"model.ckpt", "cache.bin", "train_report.json", "predictions.csv"}) {
            CHECK_MESSAGE(slurp(ws.dir / "a" / name) == slurp(ws.dir / "b" / name), name);
        }
        CHECK(slurp(ws.dir / "a" / "timing.log").find("train_seconds") != std::string::npos);
        const json report = read_json(ws.dir / "a" / "train_report.json");
        CHECK(report["config"]["hidden_dim"] == 16);
        CHECK(report["test"]["accuracy"].get<double>() > 0.5);
    }

    TEST_CASE("invalid configuration exits with 1") {
        const Workspace ws;
        std::ofstream(ws.path("bad.json")) << R"({"model": {"layer_decay": [5e-4, -1.0]}})";
        Run r = run({"--config", ws.path("bad.json"), "--out", ws.path("o"), "train", "--bundle",
                     ws.bundle});
        CHECK(r.code == kExitInvalid);
        CHECK(r.err.find("weight decay") != std::string::npos);

        std::ofstream(ws.path("typo.json")) << R"({"modle": {}})";
        r = run({"--config", ws.path("typo.json"), "train", "--bundle", ws.bundle});
        CHECK(r.code == kExitInvalid);

        r = run({"train", "--bundle", ws.path("missing")});
        CHECK(r.code == kExitInvalid);
        CHECK(run({}).code == kExitInvalid);
        CHECK(run({"frobnicate"}).code == kExitInvalid);
    }
}

TEST_SUITE("calibrate") {
    TEST_CASE("grid {0} leaves ECE unchanged with no flips") {
        const Workspace ws;
        const std::string model = ws.path("m");
        REQUIRE(ws.train(model).code == 0);
        const Run r = run({"--out", ws.path("c"), "calibrate", "--bundle", ws.bundle, "--model",
                           model, "--method", "scar", "--grid", "0"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json cal = read_json(ws.dir / "c" / "calibration.json");
        CHECK(cal["scar"]["alpha"] == 0.0);
        CHECK(cal["scar"]["beta"] == 0.0);
        CHECK(cal["scar"]["label_flips"] == 0);
        CHECK(cal["scar"]["test_ece_after"] == cal["scar"]["test_ece_before"]);
        CHECK(cal["scar"]["valid_ece_after"] == cal["scar"]["valid_ece_before"]);
        CHECK_FALSE(cal.contains("ts"));
        CHECK(slurp(ws.dir / "c" / "predictions_scar.csv") == slurp(ws.dir / "m" / "predictions.csv"));
    }

    TEST_CASE("method both reports both calibrators") {
        const Workspace ws;
        const std::string model = ws.path("m");
        REQUIRE(ws.train(model).code == 0);
        const Run r = run({"--out", model, "calibrate", "--bundle", ws.bundle});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json cal = read_json(ws.dir / "m" / "calibration.json");
        CHECK(cal["method"] == "both");
        CHECK(cal["scar"]["candidates"] == 37);
        CHECK(cal["ts"]["temperature"].get<double>() > 0.0);
        CHECK(cal["ts"]["valid_ece_after"].get<double>() <=
              cal["ts"]["valid_ece_before"].get<double>() + 1e-12);
        const auto near = cal["scar"]["near_test_nodes"].get<std::size_t>();
        const auto far = cal["scar"]["far_test_nodes"].get<std::size_t>();
        CHECK(near + far == 40);
        CHECK(std::filesystem::exists(ws.dir / "m" / "predictions_ts.csv"));
        CHECK(slurp(ws.dir / "m" / "timing.log").find("scar_node_level_seconds") != std::string::npos);
    }

    TEST_CASE("missing cache exits with 1") {
        const Workspace ws;
        const std::string model = ws.path("m");
        REQUIRE(ws.train(model).code == 0);
        std::filesystem::remove(ws.dir / "m" / "cache.bin");
        const Run r = run({"--out", model, "calibrate", "--bundle", ws.bundle});
        CHECK(r.code == kExitInvalid);
        CHECK(r.err.find("missing cache") != std::string::npos);
        CHECK(run({"--out", model, "calibrate", "--bundle", ws.bundle, "--method", "magic"}).code ==
              kExitInvalid);
    }
}

TEST_SUITE("evaluate") {
    // One-hot predictions of the true labels, written in predictions.csv format.
    void write_oracle_predictions(const Workspace& ws, const std::filesystem::path& path) {
        const GraphBundle b = load_bundle(ws.bundle);
        DenseMatrix probs(b.graph.n, b.graph.c);
        for (std::size_t v = 0; v < b.graph.n; ++v) probs(v, b.graph.labels[v]) = 1.0;
        write_predictions_csv(path, probs);
    }

    TEST_CASE("perfect one-hot predictions score zero ECE") {
        const Workspace ws;
        write_oracle_predictions(ws, ws.dir / "oracle.csv");
        const Run r = run({"--out", ws.path("e"), "evaluate", "--bundle", ws.bundle,
                           "--predictions", ws.path("oracle.csv")});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json m = read_json(ws.dir / "e" / "metrics.json");
        CHECK(m["ece"] == 0.0);
        CHECK(m["accuracy"] == 1.0);
        CHECK(m["nll"] == 0.0);
        CHECK(m["n_test"] == 40);
        CHECK(m["M"] == 20);
    }

    TEST_CASE("reliability table recomputes the reported ECE") {
        const Workspace ws;
        REQUIRE(ws.train(ws.path("m")).code == 0);
        const Run r = run({"--out", ws.path("e"), "evaluate", "--bundle", ws.bundle,
                           "--predictions", ws.path("m/predictions.csv")});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json m = read_json(ws.dir / "e" / "metrics.json");
        const auto rows = read_csv(ws.dir / "e" / "reliability.csv");
        REQUIRE(rows.size() == 21);
        CHECK(rows[0] == std::vector<std::string>{"bin_low", "bin_high", "count", "conf", "acc"});
        double sum = 0.0;
        std::size_t total = 0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const double count = std::stod(rows[i][2]);
            total += static_cast<std::size_t>(count);
            sum += count / 40.0 * std::abs(std::stod(rows[i][4]) - std::stod(rows[i][3]));
        }
        CHECK(total == 40);
        CHECK(std::abs(sum - m["ece"].get<double>()) < 1e-12);
        CHECK(read_csv(ws.dir / "e" / "histogram.csv").size() == 21);
    }

    TEST_CASE("a single bin") {
        const Workspace ws;
        write_oracle_predictions(ws, ws.dir / "oracle.csv");
        const Run r = run({"--out", ws.path("e"), "evaluate", "--bundle", ws.bundle,
                           "--predictions", ws.path("oracle.csv"), "--bins", "1"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        CHECK(read_json(ws.dir / "e" / "metrics.json")["M"] == 1);
        CHECK(read_csv(ws.dir / "e" / "reliability.csv").size() == 2);
    }

    TEST_CASE("row count mismatch exits with 1") {
        const Workspace ws;
        write_predictions_csv(ws.dir / "short.csv", DenseMatrix(5, 3, 1.0 / 3.0));
        const Run r = run({"--out", ws.path("e"), "evaluate", "--bundle", ws.bundle,
                           "--predictions", ws.path("short.csv")});
        CHECK(r.code == kExitInvalid);
        CHECK(r.err.find("prediction/node-count mismatch") != std::string::npos);
        CHECK_THROWS_AS(read_predictions_csv(ws.dir / "short.csv", 120), DimensionMismatch);
    }
}

TEST_SUITE("sweep") {
    TEST_CASE("list mode writes one row per lambda") {
        const Workspace ws;
        const Run r = run({"--config", ws.config, "--out", ws.path("s"), "sweep", "--bundle",
                           ws.bundle, "--lambdas", "5e-3,5e-4,5e-5"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const auto rows = read_csv(ws.dir / "s" / "sweep.csv");
        REQUIRE(rows.size() == 4);
        CHECK(rows[0] == std::vector<std::string>{"lambda", "mean_centroid_distance", "accuracy", "ece"});
        CHECK(std::stod(rows[1][0]) == 5e-3);
        CHECK(std::stod(rows[3][0]) == 5e-5);
        CHECK(run({"--out", ws.path("s"), "sweep", "--bundle", ws.bundle, "--lambdas", "1e-4,1e-3"})
                  .code == kExitInvalid);
    }

    TEST_CASE("binary-search mode") {
        const Workspace ws;
        const Run r = run({"--config", ws.config, "--out", ws.path("s"), "sweep", "--bundle",
                           ws.bundle, "--mode", "binary-search", "--low", "1e-4", "--high", "1e-2",
                           "--iterations", "2"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        const json doc = read_json(ws.dir / "s" / "decay_search.json");
        CHECK(doc["iterations"] == 2);
        const auto rows = read_csv(ws.dir / "s" / "decay_search.csv");
        CHECK(rows.size() == 5);
        double best = 1.0;
        for (std::size_t i = 1; i < rows.size(); ++i) best = std::min(best, std::stod(rows[i][1]));
        CHECK(doc["best_valid_ece"].get<double>() == doctest::Approx(best).epsilon(1e-15));
    }
}

TEST_SUITE("verify") {
    TEST_CASE("theory checks pass; the self-test fails as intended") {
        const testing::TempDir dir("cli_verify");
        Run r = run({"--out", dir.path().string(), "verify", "--instances", "200"});
        CHECK_MESSAGE(r.code == kExitOk, r.out, r.err);
        CHECK(r.out.find("FAIL") == std::string::npos);
        json doc = read_json(dir / "theory_report.json");
        CHECK(doc["all_passed"] == true);
        CHECK(doc["self_test"] == false);

        r = run({"--out", dir.path().string(), "verify", "--self-test", "--instances", "50"});
        CHECK(r.code == kExitRuntime);
        CHECK(r.out.find("FAIL temperature_update") != std::string::npos);
        doc = read_json(dir / "theory_report.json");
        CHECK(doc["self_test"] == true);
        CHECK(doc["all_passed"] == false);
    }
}

TEST_CASE("run configuration json round trip and validation") {
    RunConfig config;
    config.method = "ts";
    config.grid = {0.0, 0.1};
    config.sweep_mode = "binary-search";
    config.seed = 7;
    config.model.seed = 7;
    config.synth.seed = 7;
    const RunConfig back = run_config_from_json(to_json(config));
    CHECK(to_json(back) == to_json(config));
    CHECK_THROWS_AS(run_config_from_json(json{{"unknown", 1}}), ValidationError);
    config.method = "other";
    CHECK_THROWS_AS(validate(config), ValidationError);
    config = RunConfig{};
    config.ece_bins = 0;
    CHECK_THROWS_AS(validate(config), ValidationError);
}
