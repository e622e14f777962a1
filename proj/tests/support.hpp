#pragma once

// Shared fixtures and brute-force oracles for the test suites.

#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "graphcal/graph.hpp"
#include "graphcal/numerics.hpp"

namespace testing {

using graphcal::DenseMatrix;
using graphcal::NodeId;
using graphcal::SeededRng;

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, SeededRng& rng,
                                 double lo = -1.0, double hi = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = lo + (hi - lo) * rng.uniform();
    return m;
}

/// Triple-loop product, summing k in ascending order.
inline DenseMatrix dense_product(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    }
    return out;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

/// Random simple graph with each pair connected independently with probability p.
inline std::vector<graphcal::Edge> random_edges(std::size_t n, double p, SeededRng& rng) {
    std::vector<graphcal::Edge> edges;
    for (NodeId i = 0; i < n; ++i) {
        for (NodeId j = i + 1; j < n; ++j) {
            if (rng.uniform() < p) edges.emplace_back(i, j);
        }
    }
    return edges;
}

inline graphcal::Graph random_graph(std::size_t n, std::size_t d, std::size_t c, double p,
                                    SeededRng& rng) {
    std::vector<int> labels(n);
    for (std::size_t v = 0; v < n; ++v) labels[v] = static_cast<int>(v % c);
    return graphcal::make_graph(random_matrix(n, d, rng), labels, c, random_edges(n, p, rng));
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("graphcal_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
