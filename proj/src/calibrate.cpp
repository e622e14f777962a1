#include "graphcal/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "graphcal/error.hpp"
#include "graphcal/metrics.hpp"

namespace graphcal {

namespace {

void check_coefficient(double value, const char* name) {
    if (!(value >= 0.0 && value <= 1.0)) {
        throw ValidationError(std::string(name) + " must lie in [0, 1]");
    }
}

}  // namespace

CalibratedOutput scar_node_level(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                 const DenseMatrix& final_weights, const Predictions& predictions,
                                 const CalibrationPlan& plan) {
    check_coefficient(plan.alpha, "alpha");
    check_coefficient(plan.beta, "beta");
    const std::size_t n = final_aggregate.rows();
    if (logits.rows() != n || predictions.labels.size() != n) {
        throw DimensionMismatch("scar_node_level: representation, logit and prediction counts differ");
    }
    if (final_weights.rows() != final_aggregate.cols() || final_weights.cols() != logits.cols()) {
        throw DimensionMismatch("scar_node_level: final-layer weights do not match the cache");
    }

    CalibratedOutput out;
    out.representations = final_aggregate;
    out.logits = logits;
    std::vector<char> touched(n, 0);
    std::vector<double> centroid(final_weights.rows());

    auto blend = [&](const std::vector<NodeId>& nodes, double coef) {
        for (NodeId t : nodes) {
            if (t >= n) throw ValidationError("scar_node_level: node id out of range");
            if (touched[t] != 0) {
                throw StructuralError("scar_node_level: node " + std::to_string(t) +
                                      " appears twice in the partition");
            }
            touched[t] = 1;
            if (coef == 0.0) continue;
            const auto cls = static_cast<std::size_t>(predictions.labels[t]);
            auto h = out.representations.row(t);
            for (std::size_t r = 0; r < h.size(); ++r) {
                h[r] = coef * final_weights(r, cls) + (1.0 - coef) * h[r];
            }
            row_times(h, final_weights, out.logits.row(t));
        }
    };
    blend(plan.partition.near, plan.alpha);
    blend(plan.partition.far, plan.beta);

    out.probs = softmax_rows(out.logits);
    out.predictions = predict(out.probs);
    for (std::size_t v = 0; v < n; ++v) {
        if (touched[v] != 0 && out.predictions.labels[v] != predictions.labels[v]) {
            ++out.label_flips;
        }
    }
    return out;
}

CalibratedOutput scar_node_level(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                 const DenseMatrix& final_weights, const Predictions& predictions,
                                 const CalibrationPlan& plan, std::span<const NodeId> eligible) {
    std::vector<char> allowed(final_aggregate.rows(), 0);
    for (NodeId v : eligible) {
        if (v < allowed.size()) allowed[v] = 1;
    }
    for (const auto* list : {&plan.partition.near, &plan.partition.far}) {
        for (NodeId v : *list) {
            if (v >= allowed.size() || allowed[v] == 0) {
                throw ValidationError("scar_node_level: partition node " + std::to_string(v) +
                                      " is not in the evaluated set");
            }
        }
    }
    return scar_node_level(final_aggregate, logits, final_weights, predictions, plan);
}

std::vector<double> default_alpha_beta_grid() {
    return {0.0, 1e-6, 5e-6, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3};
}

double masked_ece(const DenseMatrix& probs, std::span<const int> labels,
                  std::span<const NodeId> mask, std::size_t bins) {
    const Predictions preds = predict(probs);
    std::vector<double> conf;
    std::vector<bool> correct;
    conf.reserve(mask.size());
    correct.reserve(mask.size());
    for (NodeId v : mask) {
        conf.push_back(preds.confidence[v]);
        correct.push_back(preds.labels[v] == labels[v]);
    }
    return ece(conf, correct, bins).ece;
}

AlphaBetaSearch search_alpha_beta(const DenseMatrix& final_aggregate, const DenseMatrix& logits,
                                  const DenseMatrix& final_weights, const Graph& graph,
                                  const SplitMasks& splits, std::span<const double> grid,
                                  std::size_t ece_bins) {
    if (grid.empty()) throw ValidationError("search_alpha_beta: empty grid");
    if (splits.valid.empty()) throw ValidationError("search_alpha_beta: empty validation set");
    std::vector<double> values(grid.begin(), grid.end());
    for (double v : values) check_coefficient(v, "grid value");
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    std::vector<std::pair<double, double>> candidates{{0.0, 0.0}};
    for (double a : values) {
        for (double b : values) {
            if (b > a) candidates.emplace_back(a, b);
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    const Predictions preds = predict(softmax_rows(logits));
    CalibrationPlan trial;
    trial.partition = partition_by_neighbors(graph, splits.valid, splits.train);

    AlphaBetaSearch result;
    result.candidates = candidates.size();
    result.valid_ece_before = masked_ece(softmax_rows(logits), graph.labels, splits.valid, ece_bins);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : candidates) {
        trial.alpha = a;
        trial.beta = b;
        const auto out = scar_node_level(final_aggregate, logits, final_weights, preds, trial);
        const double score = masked_ece(out.probs, graph.labels, splits.valid, ece_bins);
        if (score < best) {
            best = score;
            result.plan.alpha = a;
            result.plan.beta = b;
        }
    }
    result.valid_ece_after = best;
    result.plan.partition = partition_test_nodes(graph, splits);
    return result;
}

DecaySearch search_final_decay(const Graph& graph, const NormalizedAdjacency& adj,
                               const SplitMasks& splits, const ModelConfig& base, double low,
                               double high, std::size_t iterations, std::size_t ece_bins) {
    if (!(low > 0.0) || !(high >= low) || !std::isfinite(high)) {
        throw ValidationError("final-decay search needs 0 < low <= high");
    }
    DecaySearch search;
    auto evaluate = [&](double lambda) -> double {
        for (const auto& e : search.evaluations) {
            if (e.final_decay == lambda) return e.valid_ece;
        }
        ModelConfig config = base;
        config.layer_decay.back() = lambda;
        const TrainResult result = train(graph, adj, splits, config);
        const Predictions preds = predict(result.cache);
        DecayEvaluation e;
        e.final_decay = lambda;
        e.valid_ece = masked_ece(result.cache.probs, graph.labels, splits.valid, ece_bins);
        e.test_ece = masked_ece(result.cache.probs, graph.labels, splits.test, ece_bins);
        e.test_accuracy = accuracy(preds.labels, graph.labels, splits.test);
        search.evaluations.push_back(e);
        if (search.evaluations.size() == 1 || e.valid_ece < search.best_valid_ece) {
            search.best_decay = lambda;
            search.best_valid_ece = e.valid_ece;
        }
        return e.valid_ece;
    };

    double lo = low;
    double hi = high;
    double lo_ece = evaluate(lo);
    if (low == high) return search;
    double hi_ece = evaluate(hi);
    for (std::size_t it = 0; it < iterations; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double mid_ece = evaluate(mid);
        if (lo_ece <= hi_ece) {
            hi = mid;
            hi_ece = mid_ece;
        } else {
            lo = mid;
            lo_ece = mid_ece;
        }
    }
    return search;
}

DenseMatrix gather_rows(const DenseMatrix& m, std::span<const NodeId> rows) {
    DenseMatrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

DenseMatrix apply_temperature(const DenseMatrix& logits, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ValidationError("temperature must be positive and finite");
    }
    DenseMatrix scaled = logits;
    for (double& v : scaled.data()) v /= temperature;
    return softmax_rows(scaled);
}

TemperatureModel fit_temperature(const DenseMatrix& logits, std::span<const int> labels) {
    if (logits.rows() == 0) throw ValidationError("fit_temperature: no validation nodes");
    if (labels.size() != logits.rows()) {
        throw DimensionMismatch("fit_temperature: label count differs from logit rows");
    }
    std::vector<NodeId> all(logits.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<NodeId>(i);
    auto objective = [&](double t) {
        return cross_entropy(apply_temperature(logits, t), labels, all);
    };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = kMinTemperature;
    double hi = kMaxTemperature;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = objective(x1);
    double f2 = objective(x2);
    while (hi - lo > 1e-4) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    return TemperatureModel{0.5 * (lo + hi)};
}

}  // namespace graphcal
