#include "graphcal/model.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "graphcal/binary_io.hpp"
#include "graphcal/error.hpp"

namespace graphcal {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    throw ValidationError("unknown optimizer \"" + name + "\" (expected adam or sgd)");
}

void validate(const ModelConfig& config) {
    if (config.n_layers == 0) throw ValidationError("n_layers must be at least 1");
    if (config.layer_decay.size() != config.n_layers) {
        throw ValidationError("layer_decay needs one entry per layer (" +
                              std::to_string(config.n_layers) + "), got " +
                              std::to_string(config.layer_decay.size()));
    }
    for (double lambda : config.layer_decay) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
            throw ValidationError("weight decay must be a finite non-negative number");
        }
    }
    if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
        throw ValidationError("dropout_rate must lie in [0, 1)");
    }
    if (config.n_layers > 1 && config.hidden_dim == 0) {
        throw ValidationError("hidden_dim must be positive");
    }
    if (config.max_epochs == 0) throw ValidationError("max_epochs must be positive");
}

json to_json(const ModelConfig& config) {
    return json{{"hidden_dim", config.hidden_dim},
                {"n_layers", config.n_layers},
                {"layer_decay", config.layer_decay},
                {"learning_rate", config.learning_rate},
                {"dropout_rate", config.dropout_rate},
                {"max_epochs", config.max_epochs},
                {"patience", config.patience},
                {"optimizer", to_string(config.optimizer)},
                {"seed", config.seed}};
}

ModelConfig model_config_from_json(const json& doc, ModelConfig base) {
    try {
        if (doc.contains("hidden_dim")) base.hidden_dim = doc["hidden_dim"].get<std::size_t>();
        if (doc.contains("n_layers")) base.n_layers = doc["n_layers"].get<std::size_t>();
        if (doc.contains("layer_decay")) {
            base.layer_decay = doc["layer_decay"].get<std::vector<double>>();
        } else if (doc.contains("n_layers") && base.layer_decay.size() != base.n_layers) {
            base.layer_decay.resize(base.n_layers, base.layer_decay.front());
        }
        // Convenience form: one global decay plus an optional final-layer override.
        if (doc.contains("weight_decay")) {
            const double wd = doc["weight_decay"].get<double>();
            for (std::size_t k = 0; k + 1 < base.layer_decay.size(); ++k) base.layer_decay[k] = wd;
            if (!doc.contains("final_layer_decay")) base.layer_decay.back() = wd;
        }
        if (doc.contains("final_layer_decay")) {
            base.layer_decay.back() = doc["final_layer_decay"].get<double>();
        }
        if (doc.contains("learning_rate")) base.learning_rate = doc["learning_rate"].get<double>();
        if (doc.contains("dropout_rate")) base.dropout_rate = doc["dropout_rate"].get<double>();
        if (doc.contains("max_epochs")) base.max_epochs = doc["max_epochs"].get<std::size_t>();
        if (doc.contains("patience")) base.patience = doc["patience"].get<std::size_t>();
        if (doc.contains("optimizer")) {
            base.optimizer = optimizer_from_string(doc["optimizer"].get<std::string>());
        }
        if (doc.contains("seed")) base.seed = doc["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model config: ") + e.what());
    }
    return base;
}

ModelParams init_params(const ModelConfig& config, std::size_t input_dim, std::size_t num_classes,
                        SeededRng& rng) {
    validate(config);
    ModelParams params;
    std::size_t fan_in = input_dim;
    for (std::size_t k = 0; k < config.n_layers; ++k) {
        const std::size_t fan_out = k + 1 == config.n_layers ? num_classes : config.hidden_dim;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        DenseMatrix w(fan_in, fan_out);
        for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
        params.weights.push_back(std::move(w));
        fan_in = fan_out;
    }
    return params;
}

namespace {

void check_chain(const ModelParams& params, const DenseMatrix& features,
                 const NormalizedAdjacency& adj) {
    if (params.weights.empty()) throw ValidationError("model has no layers");
    if (adj.matrix.rows != features.rows()) {
        throw DimensionMismatch("adjacency has " + std::to_string(adj.matrix.rows) +
                                " rows but features have " + std::to_string(features.rows()));
    }
    std::size_t width = features.cols();
    for (std::size_t k = 0; k < params.weights.size(); ++k) {
        if (params.weights[k].rows() != width) {
            throw DimensionMismatch("layer " + std::to_string(k + 1) + " expects input width " +
                                    std::to_string(params.weights[k].rows()) + ", got " +
                                    std::to_string(width));
        }
        width = params.weights[k].cols();
    }
}

ForwardCache run_forward(const ModelParams& params, const DenseMatrix& features,
                         const NormalizedAdjacency& adj, const std::vector<DenseMatrix>* masks) {
    check_chain(params, features, adj);
    const std::size_t layers = params.weights.size();
    ForwardCache cache;
    DenseMatrix current = features;
    for (std::size_t k = 0; k < layers; ++k) {
        if (masks != nullptr) {
            current = hadamard(current, (*masks)[k]);
            cache.dropout_masks.push_back((*masks)[k]);
        }
        if (k + 1 < layers) {
            // Transform before aggregating: same product, far cheaper for wide inputs.
            DenseMatrix pre = spmm(adj.matrix, matmul(current, params.weights[k]));
            cache.layer_inputs.push_back(std::move(current));
            current = relu(pre);
            cache.pre_activations.push_back(std::move(pre));
        } else {
            cache.final_aggregate = spmm(adj.matrix, current);
            cache.layer_inputs.push_back(std::move(current));
            cache.logits = matmul(cache.final_aggregate, params.weights[k]);
            cache.probs = softmax_rows(cache.logits);
        }
    }
    return cache;
}

}  // namespace

ForwardCache forward(const ModelParams& params, const DenseMatrix& features,
                     const NormalizedAdjacency& adj, Mode mode, double dropout_rate,
                     SeededRng* rng) {
    if (mode == Mode::eval) return run_forward(params, features, adj, nullptr);
    if (rng == nullptr) throw ValidationError("train-mode forward requires an rng");
    std::vector<DenseMatrix> masks;
    masks.reserve(params.weights.size());
    for (const auto& w : params.weights) {
        masks.push_back(dropout_mask(features.rows(), w.rows(), dropout_rate, *rng));
    }
    return run_forward(params, features, adj, &masks);
}

ForwardCache forward_with_masks(const ModelParams& params, const DenseMatrix& features,
                                const NormalizedAdjacency& adj,
                                const std::vector<DenseMatrix>& masks) {
    if (masks.size() != params.weights.size()) {
        throw DimensionMismatch("forward_with_masks: need one mask per layer");
    }
    return run_forward(params, features, adj, &masks);
}

LossAndGrads loss_and_grads(const ModelParams& params, const ForwardCache& cache,
                            const NormalizedAdjacency& adj, std::span<const int> labels,
                            std::span<const NodeId> mask, std::span<const double> layer_decay) {
    const std::size_t layers = params.weights.size();
    if (layer_decay.size() != layers) {
        throw DimensionMismatch("loss_and_grads: need one decay coefficient per layer");
    }
    if (cache.layer_inputs.size() != layers || cache.pre_activations.size() + 1 != layers) {
        throw DimensionMismatch("loss_and_grads: cache does not match the model depth");
    }
    const bool has_masks = !cache.dropout_masks.empty();

    LossAndGrads out;
    out.cross_entropy = cross_entropy(cache.probs, labels, mask);
    double decay = 0.0;
    for (std::size_t k = 0; k < layers; ++k) {
        decay += 0.5 * layer_decay[k] * frobenius_sq(params.weights[k]);
    }
    out.loss = out.cross_entropy + decay;
    out.grads.resize(layers);

    // d(mean CE)/dZ is (S - Y) / |mask| on masked rows and zero elsewhere.
    const double scale = 1.0 / static_cast<double>(mask.size());
    DenseMatrix upstream(cache.probs.rows(), cache.probs.cols());
    for (NodeId v : mask) {
        auto dst = upstream.row(v);
        const auto src = cache.probs.row(v);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] * scale;
        dst[static_cast<std::size_t>(labels[v])] -= scale;
    }

    auto add_decay = [&](std::size_t k, DenseMatrix grad) {
        auto g = grad.data();
        const auto w = params.weights[k].data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += layer_decay[k] * w[i];
        out.grads[k] = std::move(grad);
    };

    const std::size_t last = layers - 1;
    add_decay(last, matmul_tn(cache.final_aggregate, upstream));
    if (layers == 1) return out;

    // Â is symmetric, so its transpose is itself.
    DenseMatrix d_input = spmm(adj.matrix, matmul_nt(upstream, params.weights[last]));
    for (std::size_t k = last; k-- > 0;) {
        if (has_masks) d_input = hadamard(d_input, cache.dropout_masks[k + 1]);
        const DenseMatrix& pre = cache.pre_activations[k];
        auto g = d_input.data();
        const auto p = pre.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(p[i] > 0.0)) g[i] = 0.0;
        }
        DenseMatrix d_product = spmm(adj.matrix, d_input);
        add_decay(k, matmul_tn(cache.layer_inputs[k], d_product));
        if (k > 0) d_input = matmul_nt(d_product, params.weights[k]);
    }
    return out;
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double learning_rate) {
    if (grads.size() != params.weights.size()) {
        throw DimensionMismatch("sgd_step: gradient count differs from layer count");
    }
    ModelParams next = params;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        auto w = next.weights[k].data();
        const auto g = grads[k].data();
        if (w.size() != g.size()) throw DimensionMismatch("sgd_step: gradient shape mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * g[i];
    }
    return next;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
    AdamState state;
    for (const auto& w : params.weights) {
        state.first_moment.emplace_back(w.rows(), w.cols());
        state.second_moment.emplace_back(w.rows(), w.cols());
    }
    return state;
}

ModelParams adam_step(const ModelParams& params, const Gradients& grads, AdamState& state,
                      const AdamHyper& hyper) {
    if (grads.size() != params.weights.size() ||
        state.first_moment.size() != params.weights.size()) {
        throw DimensionMismatch("adam_step: state or gradients do not match the parameters");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(hyper.beta1, t);
    const double correction2 = 1.0 - std::pow(hyper.beta2, t);
    ModelParams next = params;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        auto w = next.weights[k].data();
        auto m = state.first_moment[k].data();
        auto v = state.second_moment[k].data();
        const auto g = grads[k].data();
        if (w.size() != g.size() || m.size() != g.size()) {
            throw DimensionMismatch("adam_step: shape mismatch");
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            w[i] -= hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
        }
    }
    return next;
}

json to_json(const TrainReport& report) {
    json epochs = json::array();
    for (const auto& e : report.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"valid_loss", e.valid_loss},
                          {"valid_accuracy", e.valid_accuracy}});
    }
    return json{{"best_epoch", report.best_epoch},
                {"stopping_epoch", report.stopping_epoch},
                {"epochs", std::move(epochs)}};
}

namespace {

double masked_accuracy(const DenseMatrix& probs, std::span<const int> labels,
                       std::span<const NodeId> mask) {
    const Predictions preds = predict(probs);
    std::size_t hits = 0;
    for (NodeId v : mask) hits += preds.labels[v] == labels[v] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(mask.size());
}

}  // namespace

TrainResult train(const Graph& graph, const NormalizedAdjacency& adj, const SplitMasks& splits,
                  const ModelConfig& config) {
    validate(config);
    if (splits.train.empty() || splits.valid.empty()) {
        throw ValidationError("training needs non-empty train and validation sets");
    }
    const auto started = std::chrono::steady_clock::now();
    SeededRng root(config.seed);
    SeededRng init_rng = root.split(0);
    SeededRng dropout_rng = root.split(1);

    ModelParams params = init_params(config, graph.d, graph.c, init_rng);
    AdamState adam = AdamState::zeros_like(params);
    const AdamHyper hyper{.learning_rate = config.learning_rate};

    TrainResult result;
    ModelParams best = params;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const ForwardCache cache =
            forward(params, graph.features, adj, Mode::train, config.dropout_rate, &dropout_rng);
        LossAndGrads lg =
            loss_and_grads(params, cache, adj, graph.labels, splits.train, config.layer_decay);
        if (!std::isfinite(lg.loss)) {
            std::ostringstream msg;
            msg << "non-finite training loss at epoch " << epoch << " (cross-entropy "
                << lg.cross_entropy << "); try a smaller learning rate";
            throw NumericalError(msg.str());
        }
        params = config.optimizer == OptimizerKind::adam
                     ? adam_step(params, lg.grads, adam, hyper)
                     : sgd_step(params, lg.grads, config.learning_rate);

        const ForwardCache eval = forward(params, graph.features, adj, Mode::eval);
        EpochRecord record{epoch, lg.loss, cross_entropy(eval.probs, graph.labels, splits.valid),
                           masked_accuracy(eval.probs, graph.labels, splits.valid)};
        result.report.epochs.push_back(record);
        result.report.stopping_epoch = epoch;
        if (!std::isfinite(record.valid_loss)) {
            throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        if (record.valid_loss < best_loss) {
            best_loss = record.valid_loss;
            best = params;
            result.report.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience && config.patience > 0) {
            break;
        }
    }
    result.params = std::move(best);
    result.cache = forward(result.params, graph.features, adj, Mode::eval);
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

Predictions predict(const DenseMatrix& probs) {
    Predictions out;
    out.labels.resize(probs.rows());
    out.confidence.resize(probs.rows());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < row.size(); ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        out.labels[r] = static_cast<int>(arg);
        out.confidence[r] = row.empty() ? 0.0 : row[arg];
    }
    return out;
}

namespace {

constexpr char kCheckpointMagic[] = "GCAL1";
constexpr char kCacheMagic[] = "GCACHE1";

void read_magic(std::istream& in, const char* expected, const fs::path& path) {
    const std::size_t len = std::char_traits<char>::length(expected);
    std::string magic(len, '\0');
    if (!in.read(magic.data(), static_cast<std::streamsize>(len))) {
        throw FormatError(path.string() + ": truncated header");
    }
    if (magic != expected) {
        if (magic.compare(0, len - 1, expected, len - 1) == 0) {
            throw FormatError(path.string() + ": unsupported version \"" + magic +
                              "\", expected \"" + expected + "\"");
        }
        throw FormatError(path.string() + ": not a " + expected + " file");
    }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const fs::path& path) {
    json meta = to_json(config);
    meta["input_dim"] = params.weights.front().rows();
    meta["num_classes"] = params.weights.back().cols();
    const std::string text = meta.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 5);
    binio::write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    binio::write_u64(out, params.weights.size());
    for (const auto& w : params.weights) binio::write_matrix(out, w);
    if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("missing checkpoint: " + path.string());
    read_magic(in, kCheckpointMagic, path);
    const auto len = binio::read_u64(in, "checkpoint");
    if (len > (1u << 24)) throw FormatError(path.string() + ": corrupt config length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
        throw FormatError(path.string() + ": truncated config block");
    }
    Checkpoint ckpt;
    json meta;
    try {
        meta = json::parse(text);
        ckpt.input_dim = meta.at("input_dim").get<std::size_t>();
        ckpt.num_classes = meta.at("num_classes").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": corrupt config block (" + e.what() + ")");
    }
    ckpt.config = model_config_from_json(meta);
    validate(ckpt.config);
    const auto count = binio::read_u64(in, "checkpoint");
    if (count != ckpt.config.n_layers) {
        throw FormatError(path.string() + ": matrix count disagrees with n_layers");
    }
    std::size_t fan_in = ckpt.input_dim;
    for (std::size_t k = 0; k < count; ++k) {
        DenseMatrix w = binio::read_matrix(in, "checkpoint");
        const std::size_t fan_out = k + 1 == count ? ckpt.num_classes : ckpt.config.hidden_dim;
        if (w.rows() != fan_in || w.cols() != fan_out) {
            std::ostringstream msg;
            msg << path.string() << ": layer " << k + 1 << " header is " << w.rows() << "x"
                << w.cols() << ", expected " << fan_in << "x" << fan_out;
            throw DimensionMismatch(msg.str());
        }
        ckpt.params.weights.push_back(std::move(w));
        fan_in = fan_out;
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after the last matrix");
    }
    return ckpt;
}

void save_eval_cache(const ForwardCache& cache, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write cache " + path.string());
    out.write(kCacheMagic, 7);
    binio::write_matrix(out, cache.final_aggregate);
    binio::write_matrix(out, cache.logits);
    if (!out) throw FormatError("failed writing cache " + path.string());
}

EvalCache load_eval_cache(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("missing cache: " + path.string());
    read_magic(in, kCacheMagic, path);
    EvalCache cache;
    cache.final_aggregate = binio::read_matrix(in, "cache");
    cache.logits = binio::read_matrix(in, "cache");
    if (cache.final_aggregate.rows() != cache.logits.rows()) {
        throw DimensionMismatch(path.string() + ": representation and logit rows differ");
    }
    return cache;
}

}  // namespace graphcal
