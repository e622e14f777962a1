#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "graphcal/numerics.hpp"

namespace graphcal {

using Edge = std::pair<NodeId, NodeId>;

/// Attributed, labelled, undirected graph. Edges are stored once with
/// first < second; `adjacency` holds both directions and no self-loops.
struct Graph {
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t c = 0;
    DenseMatrix features;
    std::vector<int> labels;
    std::vector<Edge> edges;
    CsrMatrix adjacency;
};

/// Builds a Graph and checks every invariant: labels in [0, c), finite
/// features, edge endpoints in range, no self-loops, no duplicate edges.
Graph make_graph(DenseMatrix features, std::vector<int> labels, std::size_t num_classes,
                 std::vector<Edge> edges);

struct EdgeCleanup {
    std::vector<Edge> edges;  // canonical (first < second), sorted, unique
    std::size_t duplicates = 0;
    std::size_t self_loops = 0;
};

/// Canonicalises a raw undirected edge list: orients every edge, drops
/// self-loops and repeated edges, and counts what was dropped.
EdgeCleanup canonicalize_edges(std::vector<Edge> raw, std::size_t n);

/// Symmetric 0/1 adjacency from canonical edges.
CsrMatrix adjacency_from_edges(const std::vector<Edge>& edges, std::size_t n);

/// D̃^{-1/2} (A + I) D̃^{-1/2}, with the sparsity of A plus the diagonal.
struct NormalizedAdjacency {
    CsrMatrix matrix;
};

NormalizedAdjacency normalize_adjacency(const CsrMatrix& adjacency);

struct SplitMasks {
    std::vector<NodeId> train;
    std::vector<NodeId> valid;
    std::vector<NodeId> test;
    std::size_t labels_per_class = 0;
};

/// Throws StructuralError unless the three sets are disjoint and in range.
void validate_splits(const SplitMasks& splits, std::size_t n);

/// Per class: L/C training nodes uniformly without replacement. The remaining
/// nodes are shuffled and the first n_valid become validation, the next n_test
/// become test. Each list is returned sorted by node id.
SplitMasks make_splits(const Graph& graph, std::size_t labels_per_class, std::size_t n_valid,
                       std::size_t n_test, std::uint64_t seed);

struct TestPartition {
    std::vector<NodeId> near;  // V_F: at least one training node among 1-hop neighbours
    std::vector<NodeId> far;   // V_S: everything else
};

/// Splits `targets` by whether they touch a node of `anchors` in the adjacency.
TestPartition partition_by_neighbors(const Graph& graph, std::span<const NodeId> targets,
                                     std::span<const NodeId> anchors);

/// V_F / V_S partition of the test set relative to the labelled training set.
TestPartition partition_test_nodes(const Graph& graph, const SplitMasks& splits);

/// Contextual stochastic block model parameters.
struct SyntheticSpec {
    std::size_t classes = 2;
    std::size_t nodes_per_class = 100;
    double intra_edge_prob = 0.1;
    double inter_edge_prob = 0.01;
    std::size_t feature_dim = 16;
    /// Euclidean distance between any two class means.
    double class_mean_separation = 3.0;
    double feature_noise_std = 1.0;
    std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

/// Node v belongs to class v / nodes_per_class. Class k's mean is constant on
/// the coordinates j with j % classes == k and zero elsewhere, scaled to norm
/// separation / sqrt 2, so all means are pairwise `separation` apart;
/// features are mean + N(0, noise_std^2 I). Every pair i < j is an edge with
/// probability p (same class) or q (different classes).
Graph generate_csbm(const SyntheticSpec& spec);

}  // namespace graphcal
