#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphcal/graph.hpp"
#include "graphcal/model.hpp"

namespace graphcal {

/// Settings shared by every command. All keys of the JSON config file are
/// optional; the defaults are the Cora, 20 labels per class setting.
struct RunConfig {
    std::filesystem::path bundle;
    std::filesystem::path out = ".";
    ModelConfig model;
    std::string method = "both";  // scar | ts | both
    std::vector<double> grid;     // alpha/beta candidates
    std::size_t ece_bins = 20;
    std::string sweep_mode = "list";  // list | binary-search
    std::vector<double> sweep_lambdas{5e-3, 5e-4, 5e-5};
    double search_low = 5e-6;
    double search_high = 5e-3;
    std::size_t search_iterations = 6;
    SyntheticSpec synth;
    std::size_t labels_per_class = 20;
    std::size_t n_valid = 500;
    std::size_t n_test = 1000;
    std::uint64_t seed = 0;

    RunConfig();
};

/// Reads the optional keys of `doc` on top of the defaults.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);
void validate(const RunConfig& config);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `graphcal` tool. Diagnostics go to `err`, progress to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Per-node probabilities as CSV: node_id, predicted_class, confidence, p_0..p_{c-1}.
void write_predictions_csv(const std::filesystem::path& path, const DenseMatrix& probs);

struct PredictionTable {
    std::vector<int> predicted;
    std::vector<double> confidence;
    DenseMatrix probs;
};

/// Reads a predictions CSV holding every node of an n-node graph exactly once.
PredictionTable read_predictions_csv(const std::filesystem::path& path, std::size_t n);

}  // namespace graphcal
