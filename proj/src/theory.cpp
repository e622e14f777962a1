#include "graphcal/theory.hpp"

#include <algorithm>
#include <cmath>

#include "graphcal/calibrate.hpp"
#include "graphcal/error.hpp"
#include "graphcal/metrics.hpp"

namespace graphcal {

using nlohmann::json;

double implied_temperature(double learning_rate, double final_decay) {
    const double shrink = learning_rate * final_decay;
    if (!(shrink < 1.0)) throw ValidationError("temperature undefined: eta * lambda >= 1");
    return 1.0 / (1.0 - shrink);
}

namespace {

std::vector<double> softmax_vector(std::vector<double> z) {
    softmax_inplace(z);
    return z;
}

std::vector<double> weights_times(const DenseMatrix& w, std::span<const double> h) {
    std::vector<double> z(w.cols());
    row_times(h, w, z);
    return z;
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

TheoremOneCheck verify_theorem1(const DenseMatrix& weights, std::span<const double> h,
                                std::span<const double> h_next, int label, double learning_rate,
                                double final_decay, double tau_offset) {
    const std::size_t dim = weights.rows();
    const std::size_t c = weights.cols();
    if (h.size() != dim || h_next.size() != dim) {
        throw DimensionMismatch("verify_theorem1: representation length differs from weight rows");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
        throw ValidationError("verify_theorem1: label out of range");
    }

    TheoremOneCheck check;
    check.tau = implied_temperature(learning_rate, final_decay);
    const std::vector<double> s = softmax_vector(weights_times(weights, h));
    std::vector<double> y(c, 0.0);
    y[static_cast<std::size_t>(label)] = 1.0;

    DenseMatrix updated = weights;
    const double shrink = 1.0 - learning_rate * final_decay;
    for (std::size_t r = 0; r < dim; ++r) {
        for (std::size_t i = 0; i < c; ++i) {
            updated(r, i) = shrink * weights(r, i) - learning_rate * (s[i] - y[i]) * h[r];
        }
    }
    check.s_direct = softmax_vector(weights_times(updated, h_next));

    check.b = weights_times(weights, h_next);
    const double overlap = dot(h, h_next);
    const double tau = check.tau + tau_offset;
    check.psi = DenseMatrix(c, c);
    check.s_formula.assign(c, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        double denom = 1.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double exponent = learning_rate * (s[i] - y[i] - s[j] + y[j]) * overlap;
            check.psi(i, j) = std::exp(exponent);
            if (j != i) denom += std::exp((check.b[j] - check.b[i]) / tau + exponent);
        }
        check.s_formula[i] = 1.0 / denom;
    }
    check.max_abs_residual = max_abs_difference(check.s_formula, check.s_direct);
    return check;
}

DenseMatrix closed_form_weights(const DenseMatrix& h, const DenseMatrix& probs,
                                std::span<const int> labels, std::span<const NodeId> mask,
                                double final_decay) {
    if (!(final_decay > 0.0)) throw ValidationError("closed form requires lambda > 0");
    if (probs.rows() != h.rows() || labels.size() != h.rows()) {
        throw DimensionMismatch("closed_form_weights: row counts differ");
    }
    const std::size_t dim = h.cols();
    const std::size_t c = probs.cols();
    DenseMatrix intra(dim, c);
    DenseMatrix inter(dim, c);
    for (NodeId u : mask) {
        const auto hu = h.row(u);
        for (std::size_t i = 0; i < c; ++i) {
            const bool own = labels[u] == static_cast<int>(i);
            const double coef = own ? 1.0 - probs(u, i) : probs(u, i);
            DenseMatrix& target = own ? intra : inter;
            for (std::size_t r = 0; r < dim; ++r) target(r, i) += coef * hu[r];
        }
    }
    DenseMatrix w(dim, c);
    for (std::size_t k = 0; k < w.size(); ++k) {
        w.data()[k] = (intra.data()[k] - inter.data()[k]) / final_decay;
    }
    return w;
}

namespace {

// Gradient of the summed cross-entropy plus (lambda/2)||W||^2 at W, given the
// probabilities to use for s.
DenseMatrix summed_gradient(const DenseMatrix& h, const DenseMatrix& probs,
                            std::span<const int> labels, std::span<const NodeId> mask,
                            const DenseMatrix& w, double final_decay) {
    DenseMatrix grad(w.rows(), w.cols());
    for (NodeId v : mask) {
        const auto hv = h.row(v);
        for (std::size_t i = 0; i < w.cols(); ++i) {
            const double err = probs(v, i) - (labels[v] == static_cast<int>(i) ? 1.0 : 0.0);
            for (std::size_t r = 0; r < w.rows(); ++r) grad(r, i) += err * hv[r];
        }
    }
    for (std::size_t k = 0; k < grad.size(); ++k) grad.data()[k] += final_decay * w.data()[k];
    return grad;
}

DenseMatrix masked_probs(const DenseMatrix& h, const DenseMatrix& w) {
    return softmax_rows(matmul(h, w));
}

}  // namespace

ClosedFormCheck verify_closed_form(const DenseMatrix& h, std::span<const int> labels,
                                   std::span<const NodeId> mask, std::size_t num_classes,
                                   double final_decay, double tol_grad,
                                   std::size_t max_iterations) {
    if (!(final_decay > 0.0)) throw ValidationError("verify_closed_form requires lambda > 0");
    if (!(tol_grad > 0.0)) throw ValidationError("verify_closed_form requires tol_grad > 0");
    if (mask.empty()) throw ValidationError("verify_closed_form: empty mask");
    if (labels.size() != h.rows()) throw DimensionMismatch("verify_closed_form: label count");

    double lipschitz = final_decay;
    for (NodeId v : mask) lipschitz += 0.5 * dot(h.row(v), h.row(v));
    const double step = 1.0 / lipschitz;

    ClosedFormCheck check;
    DenseMatrix w(h.cols(), num_classes);
    DenseMatrix probs = masked_probs(h, w);
    for (;;) {
        const DenseMatrix grad = summed_gradient(h, probs, labels, mask, w, final_decay);
        check.gradient_norm = std::sqrt(frobenius_sq(grad));
        if (check.gradient_norm < tol_grad) break;
        if (check.iterations == max_iterations) {
            throw NumericalError("verify_closed_form: gradient norm " +
                                 std::to_string(check.gradient_norm) + " after " +
                                 std::to_string(max_iterations) + " iterations");
        }
        for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] -= step * grad.data()[k];
        probs = masked_probs(h, w);
        ++check.iterations;
    }

    check.w_closed = closed_form_weights(h, probs, labels, mask, final_decay);
    DenseMatrix diff = w;
    for (std::size_t k = 0; k < diff.size(); ++k) diff.data()[k] -= check.w_closed.data()[k];
    const double norm = std::sqrt(frobenius_sq(w));
    check.relative_residual = norm > 0.0 ? std::sqrt(frobenius_sq(diff)) / norm : 0.0;
    check.stationarity_norm = std::sqrt(
        frobenius_sq(summed_gradient(h, probs, labels, mask, check.w_closed, final_decay)));
    check.w_optimized = std::move(w);
    return check;
}

double mean_centroid_distance(const DenseMatrix& final_weights) {
    const std::size_t c = final_weights.cols();
    if (c < 2) return 0.0;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i + 1; j < c; ++j) {
            double sq = 0.0;
            for (std::size_t r = 0; r < final_weights.rows(); ++r) {
                const double d = final_weights(r, i) - final_weights(r, j);
                sq += d * d;
            }
            total += std::sqrt(sq);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

CentroidSweepResult centroid_distance_sweep(const Graph& graph, const NormalizedAdjacency& adj,
                                            const SplitMasks& splits, const ModelConfig& base,
                                            std::span<const double> lambdas,
                                            std::size_t ece_bins) {
    if (lambdas.empty()) throw ValidationError("sweep: empty lambda list");
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (!(lambdas[i] > 0.0)) throw ValidationError("sweep: lambda values must be positive");
        if (i > 0 && !(lambdas[i] < lambdas[i - 1])) {
            throw ValidationError("sweep: lambda list must be strictly decreasing");
        }
    }
    CentroidSweepResult result;
    for (double lambda : lambdas) {
        ModelConfig config = base;
        config.layer_decay.back() = lambda;
        const TrainResult trained = train(graph, adj, splits, config);
        const Predictions preds = predict(trained.cache);
        result.lambdas.push_back(lambda);
        result.mean_distances.push_back(mean_centroid_distance(trained.params.final_layer()));
        result.accuracies.push_back(accuracy(preds.labels, graph.labels, splits.test));
        result.eces.push_back(masked_ece(trained.cache.probs, graph.labels, splits.test, ece_bins));
    }
    return result;
}

LogitDecompositionCheck verify_logit_decomposition(const DenseMatrix& h_train,
                                                   const DenseMatrix& s_train,
                                                   std::span<const int> labels,
                                                   double final_decay,
                                                   std::span<const double> h_test) {
    if (h_test.size() != h_train.cols()) {
        throw DimensionMismatch("verify_logit_decomposition: test representation length");
    }
    std::vector<NodeId> all(h_train.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<NodeId>(i);
    const DenseMatrix w = closed_form_weights(h_train, s_train, labels, all, final_decay);

    const std::size_t c = s_train.cols();
    LogitDecompositionCheck check;
    check.direct = weights_times(w, h_test);
    check.intra.assign(c, 0.0);
    check.inter.assign(c, 0.0);
    for (std::size_t u = 0; u < h_train.rows(); ++u) {
        const double sim = dot(h_train.row(u), h_test);
        for (std::size_t i = 0; i < c; ++i) {
            if (labels[u] == static_cast<int>(i)) {
                check.intra[i] += (1.0 - s_train(u, i)) * sim;
            } else {
                check.inter[i] += s_train(u, i) * sim;
            }
        }
    }
    for (std::size_t i = 0; i < c; ++i) {
        check.intra[i] /= final_decay;
        check.inter[i] /= final_decay;
        check.max_abs_deviation =
            std::max(check.max_abs_deviation, std::abs(check.direct[i] - (check.intra[i] - check.inter[i])));
    }
    return check;
}

bool TheoryReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

namespace {

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, double scale, SeededRng& rng) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

std::vector<double> random_vector_with_norm(std::size_t dim, double norm, SeededRng& rng) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    const double current = std::sqrt(dot(v, v));
    for (double& x : v) x *= norm / current;
    return v;
}

TheoryCheckResult theorem1_check(const TheorySuiteOptions& opt) {
    SeededRng rng = SeededRng(opt.seed).split(11);
    double worst = 0.0;
    double worst_psi = 0.0;
    for (std::size_t k = 0; k < opt.theorem1_instances; ++k) {
        const std::size_t c = 2 + rng.below(9);
        const std::size_t dim = 1 + rng.below(16);
        const DenseMatrix w = random_matrix(dim, c, 1.0, rng);
        const auto h = random_vector_with_norm(dim, 5.0 * rng.uniform(), rng);
        std::vector<double> h_next = h;
        if (k % 2 == 1) {
            for (double& x : h_next) x += 0.5 * rng.normal();
        }
        const int label = static_cast<int>(rng.below(c));
        const double eta = 0.05 * rng.uniform();
        const double lambda = 1e-2 * rng.uniform();
        const auto check = verify_theorem1(w, h, h_next, label, eta, lambda, opt.tau_offset);
        worst = std::max(worst, check.max_abs_residual);
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                worst_psi = std::max(worst_psi, std::abs(check.psi(i, j) * check.psi(j, i) - 1.0));
            }
        }
    }
    TheoryCheckResult r;
    r.name = "temperature_update";
    r.residual = worst;
    r.tolerance = opt.tolerances.theorem1;
    r.passed = worst < r.tolerance;
    r.details = {{"instances", opt.theorem1_instances},
                 {"tau_offset", opt.tau_offset},
                 {"max_psi_antisymmetry_error", worst_psi}};
    return r;
}

TheoryCheckResult closed_form_check(const TheorySuiteOptions& opt) {
    // Two-class toy problem plus a random three-class instance.
    const DenseMatrix toy(4, 2, std::vector<double>{1.0, 0.2, 0.8, -0.1, -0.3, 1.0, 0.1, 0.9});
    const std::vector<int> toy_labels{0, 0, 1, 1};
    const std::vector<NodeId> toy_mask{0, 1, 2, 3};
    const auto toy_check = verify_closed_form(toy, toy_labels, toy_mask, 2, 0.1,
                                              opt.tolerances.closed_form_grad);

    SeededRng rng = SeededRng(opt.seed).split(12);
    const DenseMatrix h = random_matrix(12, 5, 0.7, rng);
    std::vector<int> labels(12);
    for (int& y : labels) y = static_cast<int>(rng.below(3));
    std::vector<NodeId> mask(12);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = static_cast<NodeId>(i);
    const auto rand_check =
        verify_closed_form(h, labels, mask, 3, 0.05, opt.tolerances.closed_form_grad);

    TheoryCheckResult r;
    r.name = "closed_form_weights";
    r.residual = std::max(toy_check.relative_residual, rand_check.relative_residual);
    r.tolerance = opt.tolerances.closed_form;
    r.passed = r.residual < r.tolerance;
    r.details = {{"toy_residual", toy_check.relative_residual},
                 {"toy_iterations", toy_check.iterations},
                 {"toy_gradient_norm", toy_check.gradient_norm},
                 {"random_residual", rand_check.relative_residual},
                 {"random_iterations", rand_check.iterations},
                 {"random_gradient_norm", rand_check.gradient_norm},
                 {"tol_grad", opt.tolerances.closed_form_grad}};
    return r;
}

TheoryCheckResult decomposition_check(const TheorySuiteOptions& opt) {
    SeededRng rng = SeededRng(opt.seed).split(13);
    double worst = 0.0;
    for (std::size_t k = 0; k < opt.decomposition_instances; ++k) {
        const std::size_t n = 8;
        const std::size_t c = 3;
        const std::size_t dim = 6;
        const DenseMatrix h = random_matrix(n, dim, 1.0, rng);
        const DenseMatrix s = softmax_rows(random_matrix(n, c, 2.0, rng));
        std::vector<int> labels(n);
        for (int& y : labels) y = static_cast<int>(rng.below(c));
        const double lambda = 1e-3 + rng.uniform();
        const auto h_test = random_vector_with_norm(dim, 1.0 + 4.0 * rng.uniform(), rng);
        worst = std::max(worst,
                         verify_logit_decomposition(h, s, labels, lambda, h_test).max_abs_deviation);
    }
    TheoryCheckResult r;
    r.name = "logit_decomposition";
    r.residual = worst;
    r.tolerance = opt.tolerances.decomposition;
    r.passed = worst < r.tolerance;
    r.details = {{"instances", opt.decomposition_instances}};
    return r;
}

TheoryCheckResult centroid_check(const TheorySuiteOptions& opt) {
    const std::vector<double> lambdas{5e-3, 5e-4, 5e-5};
    std::size_t violations = 0;
    json runs = json::array();
    for (std::size_t k = 0; k < opt.sweep_seeds; ++k) {
        SyntheticSpec spec;
        spec.seed = opt.seed + k;
        const Graph g = generate_csbm(spec);
        const auto adj = normalize_adjacency(g.adjacency);
        const auto splits = make_splits(g, 20, 50, 100, spec.seed);
        ModelConfig config;
        config.seed = spec.seed;
        const auto sweep = centroid_distance_sweep(g, adj, splits, config, lambdas, 20);
        for (std::size_t i = 1; i < lambdas.size(); ++i) {
            if (!(sweep.mean_distances[i] > sweep.mean_distances[i - 1])) ++violations;
        }
        runs.push_back({{"seed", spec.seed}, {"mean_distances", sweep.mean_distances}});
    }
    TheoryCheckResult r;
    r.name = "centroid_monotonicity";
    r.residual = static_cast<double>(violations);
    r.tolerance = 0.0;
    r.passed = violations == 0;
    r.details = {{"lambdas", lambdas}, {"runs", runs}};
    return r;
}

}  // namespace

TheoryReport run_theory_suite(const TheorySuiteOptions& options) {
    TheoryReport report;
    report.checks.push_back(theorem1_check(options));
    report.checks.push_back(closed_form_check(options));
    report.checks.push_back(decomposition_check(options));
    report.checks.push_back(centroid_check(options));
    return report;
}

json to_json(const TheoryReport& report) {
    json checks = json::array();
    for (const auto& c : report.checks) {
        checks.push_back({{"name", c.name},
                          {"residual", c.residual},
                          {"tolerance", c.tolerance},
                          {"passed", c.passed},
                          {"details", c.details}});
    }
    return {{"checks", checks}, {"all_passed", report.all_passed()}};
}

}  // namespace graphcal
