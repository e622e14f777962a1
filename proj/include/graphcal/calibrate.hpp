#pragma once

#include <span>
#include <vector>

#include "graphcal/graph.hpp"
#include "graphcal/model.hpp"
#include "graphcal/numerics.hpp"

namespace graphcal {

/// Blending coefficients for node-level calibration. Nodes in partition.near
/// move toward their predicted centroid with weight alpha, nodes in
/// partition.far with weight beta.
struct CalibrationPlan {
    double alpha = 0.0;
    double beta = 0.0;
    TestPartition partition;
};

struct CalibratedOutput {
    DenseMatrix representations;  // h~ (rows outside the partition are unchanged)
    DenseMatrix logits;           // h~ W^(K) on blended rows, original logits elsewhere
    DenseMatrix probs;
    Predictions predictions;
    std::size_t label_flips = 0;  // blended nodes whose argmax changed
};

/// Node-level calibration: for node t predicted as class i,
///   h~_t = coef * W^(K)_{:,i} + (1 - coef) * h_t,   coef = alpha (near) or beta (far),
/// then logits and probabilities are recomputed for the blended rows. Rows with
/// coef == 0 are copied untouched. Nothing in the inputs is modified.
CalibratedOutput scar_node_level(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                 const DenseMatrix& final_weights, const Predictions& predictions,
                                 const CalibrationPlan& plan);

/// As above, additionally rejecting partitions that reach outside `eligible`.
CalibratedOutput scar_node_level(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                 const DenseMatrix& final_weights, const Predictions& predictions,
                                 const CalibrationPlan& plan, std::span<const NodeId> eligible);

inline CalibratedOutput scar_node_level(const ForwardCache& cache, const ModelParams& params,
                                        const Predictions& predictions,
                                        const CalibrationPlan& plan) {
    return scar_node_level(cache.final_aggregate, cache.logits, params.final_layer(), predictions,
                           plan);
}

/// alpha/beta values from 1e-6 to 5e-3 plus zero.
std::vector<double> default_alpha_beta_grid();

struct AlphaBetaSearch {
    CalibrationPlan plan;  // chosen coefficients with the test-set partition
    double valid_ece_before = 0.0;
    double valid_ece_after = 0.0;
    std::size_t candidates = 0;
};

/// Partial grid search over pairs with beta > alpha, plus (0, 0). Each pair is
/// applied to the validation nodes (split into near/far by adjacency to the
/// training set) and scored by validation ECE; the lowest wins, ties going to
/// the lexicographically smaller pair.
AlphaBetaSearch search_alpha_beta(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                  const DenseMatrix& final_weights, const Graph& graph,
                                  const SplitMasks& splits, std::span<const double> grid,
                                  std::size_t ece_bins);

struct TemperatureModel {
    double temperature = 1.0;
};

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;

/// Golden-section search for the T in [0.05, 20] minimising the NLL of
/// softmax(logits / T), to an interval width of 1e-4.
TemperatureModel fit_temperature(const DenseMatrix& logits, std::span<const int> labels);

/// softmax(logits / T). T must be positive.
DenseMatrix apply_temperature(const DenseMatrix& logits, double temperature);

/// One trained model of a final-layer decay search.
struct DecayEvaluation {
    double final_decay = 0.0;
    double valid_ece = 0.0;
    double test_ece = 0.0;
    double test_accuracy = 0.0;
};

struct DecaySearch {
    double best_decay = 0.0;
    double best_valid_ece = 0.0;
    std::vector<DecayEvaluation> evaluations;  // in evaluation order, no repeats
};

/// Class-centroid-level calibration: search lambda^(K) in [low, high] by
/// validation ECE. Each iteration trains at the geometric midpoint of the
/// current interval and keeps the half whose outer endpoint scored lower. The
/// best value seen anywhere is returned, so its validation ECE never exceeds
/// that of either initial endpoint. low == high trains once.
DecaySearch search_final_decay(const Graph& graph, const NormalizedAdjacency& adj,
                               const SplitMasks& splits, const ModelConfig& base, double low,
                               double high, std::size_t iterations, std::size_t ece_bins);

/// Rows of `m` listed in `rows`, in order.
DenseMatrix gather_rows(const DenseMatrix& m, std::span<const NodeId> rows);

/// ECE of the listed nodes given full-graph probabilities.
double masked_ece(const DenseMatrix& probs, std::span<const int> labels,
                  std::span<const NodeId> mask, std::size_t bins);

}  // namespace graphcal
