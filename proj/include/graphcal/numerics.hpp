#pragma once

// Dense/sparse linear algebra and the small set of numerical kernels the GCN
// needs. Every reduction accumulates in a fixed order (ascending inner index)
// so repeated runs are bitwise identical.

#include <cstddef>
#include <cstdint>
#include <span>
#include <initializer_list>
#include <vector>

namespace graphcal {

using NodeId = std::uint32_t;

/// Row-major matrix of doubles.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    /// Literal rows, e.g. DenseMatrix{{1, 2}, {3, 4}}. Rows must have equal length.
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Compressed sparse row matrix. Column indices are strictly ascending per row.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<NodeId> col_idx;
    std::vector<double> values;

    std::size_t nnz() const noexcept { return values.size(); }
    /// Value at (r, c), or 0 when the entry is not stored.
    double at(std::size_t r, std::size_t c) const;
    DenseMatrix to_dense() const;
    bool is_symmetric() const;

    friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;
};

/// Counter-based generator: output i is splitmix64(key + i * golden gamma).
/// The stream depends only on the key and counter, so it is identical on every
/// platform, and split() derives independent child streams.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept;
    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t below(std::uint64_t bound) noexcept;
    /// Standard normal via Box-Muller (both variates consumed, one returned).
    double normal() noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    SeededRng split(std::uint64_t stream) const noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    SeededRng(std::uint64_t key, std::uint64_t counter) noexcept : key_(key), counter_(counter) {}
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

template <typename T>
void shuffle(std::vector<T>& items, SeededRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// sparse * dense. Each output entry sums over the sparse row in ascending column order.
DenseMatrix spmm(const CsrMatrix& sparse, const DenseMatrix& dense);

/// a * b. Each output entry sums over k ascending; zero entries of `a` are skipped.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// transpose(a) * b without materialising the transpose.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
/// a * transpose(b).
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

/// out = row * b, the same kernel matmul uses for one row.
void row_times(std::span<const double> row, const DenseMatrix& b, std::span<double> out);

DenseMatrix transpose(const DenseMatrix& a);
DenseMatrix relu(const DenseMatrix& a);
DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b);

double frobenius_sq(const DenseMatrix& a);
double dot(std::span<const double> a, std::span<const double> b);

/// Row-wise softmax with max subtraction.
DenseMatrix softmax_rows(const DenseMatrix& logits);
void softmax_inplace(std::span<double> row);

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean of -log probs(v, labels[v]) over `mask`. Probabilities below 1e-12 are
/// clamped; the number of clamped entries is added to *clamped when given.
double cross_entropy(const DenseMatrix& probs, std::span<const int> labels,
                     std::span<const NodeId> mask, std::size_t* clamped = nullptr);

/// Inverted dropout mask: 0 with probability `rate`, else 1/(1-rate).
DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double rate, SeededRng& rng);

}  // namespace graphcal
