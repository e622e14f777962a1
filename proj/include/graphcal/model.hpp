#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "graphcal/graph.hpp"
#include "graphcal/numerics.hpp"

namespace graphcal {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

/// Hyperparameters of a K-layer GCN without biases. `layer_decay[k]` is the L2
/// coefficient of layer k+1, entering the loss as (lambda/2)*||W||_F^2.
/// Defaults are the Cora, 20 labels per class setting.
struct ModelConfig {
    std::size_t hidden_dim = 64;
    std::size_t n_layers = 2;
    std::vector<double> layer_decay{5e-4, 1e-4};
    double learning_rate = 0.015;
    double dropout_rate = 0.6;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 0;

    double final_decay() const { return layer_decay.back(); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);
nlohmann::json to_json(const ModelConfig& config);
/// Missing fields keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& doc, ModelConfig base = {});

/// weights[k] maps layer k's input to its output: d -> hidden -> ... -> c.
struct ModelParams {
    std::vector<DenseMatrix> weights;

    const DenseMatrix& final_layer() const { return weights.back(); }
    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

using Gradients = std::vector<DenseMatrix>;

/// Glorot-uniform initialisation, limit sqrt(6 / (fan_in + fan_out)).
ModelParams init_params(const ModelConfig& config, std::size_t input_dim, std::size_t num_classes,
                        SeededRng& rng);

enum class Mode { train, eval };

/// Intermediate values of one forward pass. For layer k (0-based):
///   layer_inputs[k] = f^(k) after dropout (f^(0) = X)
///   hidden layers:    pre_activations[k] = Â (layer_inputs[k] W_k),  f^(k+1) = ReLU(.)
///   final layer:      final_aggregate = Â layer_inputs[K-1] = h^(K),  logits = h^(K) W_K
struct ForwardCache {
    std::vector<DenseMatrix> layer_inputs;
    std::vector<DenseMatrix> pre_activations;
    std::vector<DenseMatrix> dropout_masks;  // empty in eval mode
    DenseMatrix final_aggregate;
    DenseMatrix logits;
    DenseMatrix probs;
};

/// In train mode inverted-dropout masks at `dropout_rate` are drawn from `rng`
/// for the features and every hidden input; eval mode applies none.
ForwardCache forward(const ModelParams& params, const DenseMatrix& features,
                     const NormalizedAdjacency& adj, Mode mode, double dropout_rate = 0.0,
                     SeededRng* rng = nullptr);

/// Forward pass with caller-supplied dropout masks (one per layer input);
/// used by the gradient checker to hold the masks fixed.
ForwardCache forward_with_masks(const ModelParams& params, const DenseMatrix& features,
                                const NormalizedAdjacency& adj,
                                const std::vector<DenseMatrix>& masks);

struct LossAndGrads {
    double loss = 0.0;           // cross-entropy + decay
    double cross_entropy = 0.0;  // mean over the mask
    Gradients grads;
};

/// Loss = mean cross-entropy over `mask` + sum_k (lambda_k / 2) ||W_k||_F^2 and
/// its exact gradient. The final layer's gradient column i is
/// (1/|mask|) sum_v (s_vi - y_vi) h_v + lambda_K W_:,i.
LossAndGrads loss_and_grads(const ModelParams& params, const ForwardCache& cache,
                            const NormalizedAdjacency& adj, std::span<const int> labels,
                            std::span<const NodeId> mask, std::span<const double> layer_decay);

/// W <- W - lr * grad. Decay is already part of grad.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double learning_rate);

struct AdamState {
    std::vector<DenseMatrix> first_moment;
    std::vector<DenseMatrix> second_moment;
    std::size_t step = 0;

    static AdamState zeros_like(const ModelParams& params);
};

struct AdamHyper {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. L2 decay arrives through the gradient (coupled),
/// not as a decoupled weight shrink.
ModelParams adam_step(const ModelParams& params, const Gradients& grads, AdamState& state,
                      const AdamHyper& hyper);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double valid_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    std::size_t stopping_epoch = 0;
    double wall_seconds = 0.0;  // not part of to_json, which must be reproducible
};

nlohmann::json to_json(const TrainReport& report);

struct TrainResult {
    ModelParams params;
    ForwardCache cache;  // eval mode, best-validation parameters
    TrainReport report;
};

/// Full-batch training with early stopping on validation loss; restores the
/// parameters of the best validation epoch.
TrainResult train(const Graph& graph, const NormalizedAdjacency& adj, const SplitMasks& splits,
                  const ModelConfig& config);

struct Predictions {
    std::vector<int> labels;
    std::vector<double> confidence;
};

/// Row-wise argmax (lowest index on ties) and max probability.
Predictions predict(const DenseMatrix& probs);
inline Predictions predict(const ForwardCache& cache) { return predict(cache.probs); }

struct Checkpoint {
    ModelParams params;
    ModelConfig config;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
};

/// "GCAL1", u64 JSON length, JSON config, u64 matrix count, then each matrix
/// as u64 rows, u64 cols, rows*cols f64 (all little-endian).
void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Eval-mode representations consumed by calibration: h^(K) and the logits.
struct EvalCache {
    DenseMatrix final_aggregate;
    DenseMatrix logits;
};

void save_eval_cache(const ForwardCache& cache, const std::filesystem::path& path);
EvalCache load_eval_cache(const std::filesystem::path& path);

}  // namespace graphcal
