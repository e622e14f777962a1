#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "graphcal/graph.hpp"

namespace graphcal {

/// A graph dataset on disk:
///   meta.json     {"n", "d", "c", "names"}
///   features.bin  u64 rows, u64 cols (little-endian), then rows*cols float32, row-major
///   labels.txt    one class index per line
///   edges.txt     "u v" per line, 0-based, each undirected edge once
///   splits.json   {"train": [...], "valid": [...], "test": [...]}
struct GraphBundle {
    Graph graph;
    SplitMasks splits;
    std::vector<std::string> class_names;
    std::size_t raw_edge_lines = 0;
    std::size_t duplicate_edges = 0;
    std::size_t self_loops = 0;
};

/// One integer label per non-blank line. Diagnostics name the file and line.
std::vector<int> read_label_list(const std::filesystem::path& path,
                                 std::optional<std::size_t> num_classes = std::nullopt);

/// "u v" (whitespace or comma separated) per non-blank line, node ids below n.
/// Duplicates and self-loops are returned as read.
std::vector<Edge> read_edge_list(const std::filesystem::path& path, std::size_t n);

GraphBundle load_bundle(const std::filesystem::path& dir);

/// Features are narrowed to float32 on write.
void save_bundle(const std::filesystem::path& dir, const Graph& graph, const SplitMasks& splits,
                 const std::vector<std::string>& class_names = {});

}  // namespace graphcal
