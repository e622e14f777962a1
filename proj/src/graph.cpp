#include "graphcal/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "graphcal/error.hpp"

namespace graphcal {

namespace {

std::string edge_text(const Edge& e) {
    std::ostringstream out;
    out << "(" << e.first << ", " << e.second << ")";
    return out.str();
}

}  // namespace

EdgeCleanup canonicalize_edges(std::vector<Edge> raw, std::size_t n) {
    EdgeCleanup result;
    result.edges.reserve(raw.size());
    for (auto [u, v] : raw) {
        if (u >= n || v >= n) {
            throw ValidationError("edge " + edge_text({u, v}) + " references a node >= n=" +
                                  std::to_string(n));
        }
        if (u == v) {
            ++result.self_loops;
            continue;
        }
        result.edges.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(result.edges.begin(), result.edges.end());
    const auto last = std::unique(result.edges.begin(), result.edges.end());
    result.duplicates = static_cast<std::size_t>(result.edges.end() - last);
    result.edges.erase(last, result.edges.end());
    return result;
}

CsrMatrix adjacency_from_edges(const std::vector<Edge>& edges, std::size_t n) {
    std::vector<std::vector<NodeId>> neighbors(n);
    for (auto [u, v] : edges) {
        neighbors[u].push_back(v);
        neighbors[v].push_back(u);
    }
    CsrMatrix adj;
    adj.rows = n;
    adj.cols = n;
    adj.row_ptr.assign(1, 0);
    for (auto& list : neighbors) {
        std::sort(list.begin(), list.end());
        adj.col_idx.insert(adj.col_idx.end(), list.begin(), list.end());
        adj.row_ptr.push_back(adj.col_idx.size());
    }
    adj.values.assign(adj.col_idx.size(), 1.0);
    return adj;
}

Graph make_graph(DenseMatrix features, std::vector<int> labels, std::size_t num_classes,
                 std::vector<Edge> edges) {
    const std::size_t n = features.rows();
    if (n == 0) throw ValidationError("graph must have at least one node");
    if (labels.size() != n) {
        throw DimensionMismatch("label count " + std::to_string(labels.size()) +
                                " differs from feature rows " + std::to_string(n));
    }
    if (num_classes == 0) throw ValidationError("class count must be positive");
    for (std::size_t v = 0; v < n; ++v) {
        if (labels[v] < 0 || static_cast<std::size_t>(labels[v]) >= num_classes) {
            throw ValidationError("label " + std::to_string(labels[v]) + " of node " +
                                  std::to_string(v) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
    if (!features.all_finite()) throw ValidationError("features contain non-finite values");

    std::unordered_set<std::uint64_t> seen;
    seen.reserve(edges.size() * 2);
    for (const auto& e : edges) {
        if (e.first >= n || e.second >= n) {
            throw ValidationError("edge " + edge_text(e) + " references a node >= n");
        }
        if (e.first == e.second) throw StructuralError("self-loop " + edge_text(e));
        const auto lo = std::min(e.first, e.second);
        const auto hi = std::max(e.first, e.second);
        if (!seen.insert((std::uint64_t{lo} << 32) | hi).second) {
            throw StructuralError("duplicate edge " + edge_text(e));
        }
    }
    for (auto& e : edges) e = {std::min(e.first, e.second), std::max(e.first, e.second)};

    Graph g;
    g.n = n;
    g.d = features.cols();
    g.c = num_classes;
    g.adjacency = adjacency_from_edges(edges, n);
    g.features = std::move(features);
    g.labels = std::move(labels);
    g.edges = std::move(edges);
    return g;
}

NormalizedAdjacency normalize_adjacency(const CsrMatrix& adjacency) {
    const std::size_t n = adjacency.rows;
    if (n == 0) throw ValidationError("normalize_adjacency: empty matrix");
    if (adjacency.cols != n) throw DimensionMismatch("normalize_adjacency: matrix is not square");
    for (double w : adjacency.values) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ValidationError("normalize_adjacency: negative or non-finite edge weight");
        }
    }
    if (!adjacency.is_symmetric()) throw StructuralError("normalize_adjacency: asymmetric input");

    // Degrees of A + I; any stored diagonal entry is folded into the added self-loop.
    std::vector<double> degree(n, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t p = adjacency.row_ptr[r]; p < adjacency.row_ptr[r + 1]; ++p) {
            degree[r] += adjacency.values[p];
        }
    }
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

    NormalizedAdjacency out;
    CsrMatrix& m = out.matrix;
    m.rows = n;
    m.cols = n;
    m.row_ptr.assign(1, 0);
    m.col_idx.reserve(adjacency.nnz() + n);
    m.values.reserve(adjacency.nnz() + n);
    for (std::size_t r = 0; r < n; ++r) {
        bool diagonal_done = false;
        auto emit = [&](std::size_t col, double weight) {
            m.col_idx.push_back(static_cast<NodeId>(col));
            m.values.push_back(weight / std::sqrt(degree[r] * degree[col]));
        };
        for (std::size_t p = adjacency.row_ptr[r]; p < adjacency.row_ptr[r + 1]; ++p) {
            const std::size_t col = adjacency.col_idx[p];
            if (!diagonal_done && col >= r) {
                const double self = col == r ? 1.0 + adjacency.values[p] : 1.0;
                emit(r, self);
                diagonal_done = true;
                if (col == r) continue;
            }
            emit(col, adjacency.values[p]);
        }
        if (!diagonal_done) emit(r, 1.0);
        m.row_ptr.push_back(m.col_idx.size());
    }
    return out;
}

void validate_splits(const SplitMasks& splits, std::size_t n) {
    std::vector<char> owner(n, 0);
    auto mark = [&](const std::vector<NodeId>& set, char tag, const char* name) {
        for (NodeId v : set) {
            if (v >= n) {
                throw StructuralError(std::string(name) + " split references node " +
                                      std::to_string(v) + " >= n");
            }
            if (owner[v] != 0) {
                throw StructuralError("node " + std::to_string(v) +
                                      " appears in more than one split (or twice)");
            }
            owner[v] = tag;
        }
    };
    mark(splits.train, 1, "train");
    mark(splits.valid, 2, "valid");
    mark(splits.test, 3, "test");
}

SplitMasks make_splits(const Graph& graph, std::size_t labels_per_class, std::size_t n_valid,
                       std::size_t n_test, std::uint64_t seed) {
    std::vector<std::vector<NodeId>> by_class(graph.c);
    for (std::size_t v = 0; v < graph.n; ++v) {
        by_class[static_cast<std::size_t>(graph.labels[v])].push_back(static_cast<NodeId>(v));
    }
    SeededRng rng(seed);
    SplitMasks splits;
    splits.labels_per_class = labels_per_class;
    std::vector<char> used(graph.n, 0);
    for (std::size_t k = 0; k < graph.c; ++k) {
        auto& members = by_class[k];
        if (members.size() < labels_per_class) {
            throw ValidationError("class " + std::to_string(k) + " has only " +
                                  std::to_string(members.size()) + " nodes, fewer than L/C=" +
                                  std::to_string(labels_per_class));
        }
        shuffle(members, rng);
        for (std::size_t i = 0; i < labels_per_class; ++i) {
            splits.train.push_back(members[i]);
            used[members[i]] = 1;
        }
    }
    std::vector<NodeId> rest;
    for (std::size_t v = 0; v < graph.n; ++v) {
        if (used[v] == 0) rest.push_back(static_cast<NodeId>(v));
    }
    if (rest.size() < n_valid + n_test) {
        throw ValidationError("only " + std::to_string(rest.size()) +
                              " nodes remain after training selection; need " +
                              std::to_string(n_valid + n_test));
    }
    shuffle(rest, rng);
    splits.valid.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_valid));
    splits.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_valid),
                       rest.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
    std::sort(splits.train.begin(), splits.train.end());
    std::sort(splits.valid.begin(), splits.valid.end());
    std::sort(splits.test.begin(), splits.test.end());
    return splits;
}

TestPartition partition_by_neighbors(const Graph& graph, std::span<const NodeId> targets,
                                     std::span<const NodeId> anchors) {
    std::vector<char> is_anchor(graph.n, 0);
    for (NodeId v : anchors) is_anchor[v] = 1;
    const auto& adj = graph.adjacency;
    TestPartition part;
    for (NodeId t : targets) {
        bool touches = false;
        for (std::size_t p = adj.row_ptr[t]; p < adj.row_ptr[t + 1] && !touches; ++p) {
            touches = is_anchor[adj.col_idx[p]] != 0;
        }
        (touches ? part.near : part.far).push_back(t);
    }
    return part;
}

TestPartition partition_test_nodes(const Graph& graph, const SplitMasks& splits) {
    return partition_by_neighbors(graph, splits.test, splits.train);
}

void validate(const SyntheticSpec& spec) {
    if (spec.classes == 0 || spec.nodes_per_class == 0 || spec.feature_dim == 0) {
        throw ValidationError("synthetic spec: counts must be positive");
    }
    auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(spec.intra_edge_prob) || !in_unit(spec.inter_edge_prob)) {
        throw ValidationError("synthetic spec: edge probabilities must lie in [0, 1]");
    }
    if (spec.feature_dim < spec.classes) {
        throw ValidationError("synthetic spec: feature_dim must be at least the class count");
    }
    if (!(spec.feature_noise_std >= 0.0) || !std::isfinite(spec.class_mean_separation)) {
        throw ValidationError("synthetic spec: invalid noise or separation");
    }
}

Graph generate_csbm(const SyntheticSpec& spec) {
    validate(spec);
    const std::size_t n = spec.classes * spec.nodes_per_class;
    SeededRng feature_rng = SeededRng(spec.seed).split(1);
    SeededRng edge_rng = SeededRng(spec.seed).split(2);

    std::vector<int> labels(n);
    DenseMatrix features(n, spec.feature_dim);
    std::vector<double> block_value(spec.classes);
    for (std::size_t k = 0; k < spec.classes; ++k) {
        const std::size_t block = (spec.feature_dim - k + spec.classes - 1) / spec.classes;
        block_value[k] = spec.class_mean_separation / std::sqrt(2.0 * static_cast<double>(block));
    }
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t k = v / spec.nodes_per_class;
        labels[v] = static_cast<int>(k);
        for (std::size_t j = 0; j < spec.feature_dim; ++j) {
            const double mean = j % spec.classes == k ? block_value[k] : 0.0;
            features(v, j) = mean + spec.feature_noise_std * feature_rng.normal();
        }
    }

    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = labels[i] == labels[j] ? spec.intra_edge_prob : spec.inter_edge_prob;
            // Always draw so the stream position does not depend on p.
            if (edge_rng.uniform() < p) edges.emplace_back(i, j);
        }
    }
    return make_graph(std::move(features), std::move(labels), spec.classes, std::move(edges));
}

}  // namespace graphcal
