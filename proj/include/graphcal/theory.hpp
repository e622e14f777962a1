#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphcal/graph.hpp"
#include "graphcal/model.hpp"
#include "graphcal/numerics.hpp"

namespace graphcal {

/// Temperature implied by one SGD step with final-layer decay: 1 / (1 - eta*lambda).
double implied_temperature(double learning_rate, double final_decay);

/// Comparison of the temperature-form probability update against an explicit
/// SGD step on a single node's loss.
struct TheoremOneCheck {
    double tau = 1.0;
    std::vector<double> b;  // W_:,i^T h_next
    DenseMatrix psi;        // c x c pairwise factors
    std::vector<double> s_formula;
    std::vector<double> s_direct;
    double max_abs_residual = 0.0;
};

/// `weights` is dim x c, `h` and `h_next` have length dim. `tau_offset` is added
/// to tau inside the formula only; nonzero values serve as a negative control.
TheoremOneCheck verify_theorem1(const DenseMatrix& weights, std::span<const double> h,
                                std::span<const double> h_next, int label, double learning_rate,
                                double final_decay, double tau_offset = 0.0);

struct ClosedFormCheck {
    DenseMatrix w_optimized;
    DenseMatrix w_closed;
    double relative_residual = 0.0;  // ||W_opt - W_closed||_F / ||W_opt||_F
    double gradient_norm = 0.0;      // at W_opt
    double stationarity_norm = 0.0;  // gradient at W_closed using the converged s
    std::size_t iterations = 0;
};

/// Column i of the stationary point of the summed final-layer loss:
///   (1/lambda) [ sum_{y_u = i} (1 - s_ui) h_u - sum_{y_v != i} s_vi h_v ]
/// over the rows listed in `mask`.
DenseMatrix closed_form_weights(const DenseMatrix& h, const DenseMatrix& probs,
                                std::span<const int> labels, std::span<const NodeId> mask,
                                double final_decay);

/// Minimises sum_{v in mask} CE(softmax(W^T h_v), y_v) + (lambda/2)||W||_F^2
/// over W alone by gradient descent with step 1/L until the gradient norm drops
/// below tol_grad, then compares W with the closed form built from the
/// converged probabilities. Throws NumericalError if max_iterations is reached.
ClosedFormCheck verify_closed_form(const DenseMatrix& h, std::span<const int> labels,
                                   std::span<const NodeId> mask, std::size_t num_classes,
                                   double final_decay, double tol_grad,
                                   std::size_t max_iterations = 2'000'000);

/// Mean over class pairs of ||W_:,i - W_:,j||_2.
double mean_centroid_distance(const DenseMatrix& final_weights);

struct CentroidSweepResult {
    std::vector<double> lambdas;
    std::vector<double> mean_distances;
    std::vector<double> accuracies;
    std::vector<double> eces;
};

/// Trains one model per final-layer decay (same seed and earlier-layer decays)
/// and records centroid spread, test accuracy and test ECE.
CentroidSweepResult centroid_distance_sweep(const Graph& graph, const NormalizedAdjacency& adj,
                                            const SplitMasks& splits, const ModelConfig& base,
                                            std::span<const double> lambdas,
                                            std::size_t ece_bins);

struct LogitDecompositionCheck {
    std::vector<double> direct;        // W_closed^T h_t
    std::vector<double> intra;         // (1/lambda) sum_{y_u = i} (1 - s_ui) h_u^T h_t
    std::vector<double> inter;         // (1/lambda) sum_{y_v != i} s_vi h_v^T h_t
    double max_abs_deviation = 0.0;    // max_i |direct_i - (intra_i - inter_i)|
};

/// Builds W from (h_train, s_train) in closed form and checks that the logits
/// of `h_test` split into intra- and inter-class similarity terms.
LogitDecompositionCheck verify_logit_decomposition(const DenseMatrix& h_train,
                                                   const DenseMatrix& s_train,
                                                   std::span<const int> labels,
                                                   double final_decay,
                                                   std::span<const double> h_test);

struct TheoryTolerances {
    double theorem1 = 1e-9;
    double closed_form = 1e-6;
    double closed_form_grad = 1e-10;
    double decomposition = 1e-10;
};

struct TheoryCheckResult {
    std::string name;
    double residual = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    nlohmann::json details;
};

struct TheoryReport {
    std::vector<TheoryCheckResult> checks;
    bool all_passed() const;
};

struct TheorySuiteOptions {
    std::uint64_t seed = 0;
    std::size_t theorem1_instances = 1000;
    std::size_t decomposition_instances = 100;
    std::size_t sweep_seeds = 1;
    double tau_offset = 0.0;
    TheoryTolerances tolerances;
};

/// Runs the four checks on seeded random instances: the temperature update,
/// closed-form self-consistency, the logit decomposition and centroid
/// monotonicity on a separable two-class CSBM.
TheoryReport run_theory_suite(const TheorySuiteOptions& options);

nlohmann::json to_json(const TheoryReport& report);

}  // namespace graphcal
