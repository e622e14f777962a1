#include "graphcal/bundle.hpp"

#include <bit>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "graphcal/binary_io.hpp"
#include "graphcal/error.hpp"

namespace graphcal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path require_file(const fs::path& dir, const char* name) {
    fs::path p = dir / name;
    if (!fs::is_regular_file(p)) throw FormatError("missing bundle file: " + p.string());
    return p;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(p.string() + ": invalid JSON (" + e.what() + ")");
    }
}

std::vector<NodeId> node_list(const json& doc, const char* key, const fs::path& p) {
    if (!doc.contains(key) || !doc[key].is_array()) {
        throw FormatError(p.string() + ": missing array \"" + key + "\"");
    }
    std::vector<NodeId> out;
    for (const auto& v : doc[key]) {
        if (!v.is_number_unsigned()) {
            throw FormatError(p.string() + ": non-integer node id in \"" + key + "\"");
        }
        out.push_back(v.get<NodeId>());
    }
    return out;
}

}  // namespace

std::vector<int> read_label_list(const fs::path& path, std::optional<std::size_t> num_classes) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    const std::string name = path.filename().string();
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        long long value = 0;
        std::string extra;
        if (!(ls >> value) || (ls >> extra)) {
            throw FormatError(name + ":" + std::to_string(lineno) + ": expected one integer label");
        }
        if (value < 0 || (num_classes && static_cast<std::size_t>(value) >= *num_classes) ||
            value > std::numeric_limits<int>::max()) {
            std::string msg = "label out of range: " + name + ":" + std::to_string(lineno) +
                              " has " + std::to_string(value);
            if (num_classes) msg += ", expected [0, " + std::to_string(*num_classes) + ")";
            throw ValidationError(msg);
        }
        labels.push_back(static_cast<int>(value));
    }
    return labels;
}

std::vector<Edge> read_edge_list(const fs::path& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    const std::string name = path.filename().string();
    std::vector<Edge> raw;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        for (char& ch : line) {
            if (ch == ',') ch = ' ';
        }
        std::istringstream ls(line);
        long long u = -1, v = -1;
        std::string extra;
        if (!(ls >> u >> v) || u < 0 || v < 0 || (ls >> extra)) {
            throw FormatError(name + ":" + std::to_string(lineno) +
                              ": expected two non-negative node ids");
        }
        if (static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
            throw ValidationError(name + ":" + std::to_string(lineno) + ": edge (" +
                                  std::to_string(u) + ", " + std::to_string(v) +
                                  ") references a node >= n=" + std::to_string(n));
        }
        raw.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
    return raw;
}

GraphBundle load_bundle(const fs::path& dir) {
    const auto meta_path = require_file(dir, "meta.json");
    const auto feat_path = require_file(dir, "features.bin");
    const auto label_path = require_file(dir, "labels.txt");
    const auto edge_path = require_file(dir, "edges.txt");
    const auto split_path = require_file(dir, "splits.json");

    const json meta = read_json(meta_path);
    std::size_t n = 0, d = 0, c = 0;
    try {
        n = meta.at("n").get<std::size_t>();
        d = meta.at("d").get<std::size_t>();
        c = meta.at("c").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    GraphBundle bundle;
    if (meta.contains("names")) bundle.class_names = meta["names"].get<std::vector<std::string>>();

    std::ifstream fin(feat_path, std::ios::binary);
    const auto rows = binio::read_u64(fin, "features.bin");
    const auto cols = binio::read_u64(fin, "features.bin");
    if (rows != n || cols != d) {
        std::ostringstream msg;
        msg << "dimension mismatch: features.bin header is " << rows << "x" << cols
            << " but meta.json declares n=" << n << ", d=" << d;
        throw DimensionMismatch(msg.str());
    }
    DenseMatrix features(n, d);
    for (double& v : features.data()) {
        v = static_cast<double>(std::bit_cast<float>(binio::read_u32(fin, "features.bin")));
    }
    if (fin.peek() != std::char_traits<char>::eof()) {
        throw DimensionMismatch("dimension mismatch: features.bin has trailing bytes");
    }

    std::vector<int> labels = read_label_list(label_path, c);
    if (labels.size() != n) {
        throw DimensionMismatch("dimension mismatch: labels.txt has " +
                                std::to_string(labels.size()) + " entries, expected " +
                                std::to_string(n));
    }

    std::vector<Edge> raw = read_edge_list(edge_path, n);
    bundle.raw_edge_lines = raw.size();
    auto cleaned = canonicalize_edges(std::move(raw), n);
    bundle.duplicate_edges = cleaned.duplicates;
    bundle.self_loops = cleaned.self_loops;
    bundle.graph = make_graph(std::move(features), std::move(labels), c, std::move(cleaned.edges));

    const json split_doc = read_json(split_path);
    bundle.splits.train = node_list(split_doc, "train", split_path);
    bundle.splits.valid = node_list(split_doc, "valid", split_path);
    bundle.splits.test = node_list(split_doc, "test", split_path);
    if (split_doc.contains("labels_per_class")) {
        bundle.splits.labels_per_class = split_doc["labels_per_class"].get<std::size_t>();
    }
    validate_splits(bundle.splits, n);
    return bundle;
}

void save_bundle(const fs::path& dir, const Graph& graph, const SplitMasks& splits,
                 const std::vector<std::string>& class_names) {
    fs::create_directories(dir);
    json meta = {{"n", graph.n}, {"d", graph.d}, {"c", graph.c}, {"names", class_names}};
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

    std::ofstream feat(dir / "features.bin", std::ios::binary);
    binio::write_u64(feat, graph.n);
    binio::write_u64(feat, graph.d);
    for (double v : graph.features.data()) {
        binio::write_u32(feat, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }

    std::ofstream labels(dir / "labels.txt");
    for (int y : graph.labels) labels << y << "\n";

    std::ofstream edges(dir / "edges.txt");
    for (auto [u, v] : graph.edges) edges << u << " " << v << "\n";

    json split_doc = {{"train", splits.train},
                      {"valid", splits.valid},
                      {"test", splits.test},
                      {"labels_per_class", splits.labels_per_class}};
    std::ofstream(dir / "splits.json") << split_doc.dump() << "\n";
    if (!feat || !labels || !edges) throw FormatError("failed writing bundle to " + dir.string());
}

}  // namespace graphcal
