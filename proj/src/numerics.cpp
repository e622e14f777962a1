#include "graphcal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "graphcal/error.hpp"

namespace graphcal {

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        std::ostringstream msg;
        msg << what << ": shape " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
            << b.cols();
        throw DimensionMismatch(msg.str());
    }
}

void require_inner(std::size_t left, std::size_t right, const char* what) {
    if (left != right) {
        std::ostringstream msg;
        msg << what << ": inner dimensions " << left << " and " << right << " disagree";
        throw DimensionMismatch(msg.str());
    }
}

constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionMismatch("DenseMatrix: data length does not equal rows*cols");
    }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() == 0 ? 0 : rows.begin()->size()) {
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionMismatch("DenseMatrix: ragged row literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool DenseMatrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double CsrMatrix::at(std::size_t r, std::size_t c) const {
    const auto first = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
    const auto last = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
    const auto it = std::lower_bound(first, last, static_cast<NodeId>(c));
    if (it == last || *it != c) return 0.0;
    return values[static_cast<std::size_t>(it - col_idx.begin())];
}

DenseMatrix CsrMatrix::to_dense() const {
    DenseMatrix out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) out(r, col_idx[p]) = values[p];
    }
    return out;
}

bool CsrMatrix::is_symmetric() const {
    if (rows != cols) return false;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
            const std::size_t c = col_idx[p];
            const auto first = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[c]);
            const auto last = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[c + 1]);
            const auto it = std::lower_bound(first, last, static_cast<NodeId>(r));
            if (it == last || *it != r) return false;
            if (values[static_cast<std::size_t>(it - col_idx.begin())] != values[p]) return false;
        }
    }
    return true;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += kGoldenGamma;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}

std::uint64_t SeededRng::next_u64() noexcept {
    return splitmix64(key_ + kGoldenGamma * counter_++);
}

double SeededRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::below(std::uint64_t bound) noexcept {
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
}

double SeededRng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

SeededRng SeededRng::split(std::uint64_t stream) const noexcept {
    return SeededRng(splitmix64(key_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)), 0);
}

DenseMatrix spmm(const CsrMatrix& sparse, const DenseMatrix& dense) {
    require_inner(sparse.cols, dense.rows(), "spmm");
    DenseMatrix out(sparse.rows, dense.cols());
    for (std::size_t r = 0; r < sparse.rows; ++r) {
        auto dst = out.row(r);
        for (std::size_t p = sparse.row_ptr[r]; p < sparse.row_ptr[r + 1]; ++p) {
            const double w = sparse.values[p];
            const auto src = dense.row(sparse.col_idx[p]);
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
        }
    }
    return out;
}

void row_times(std::span<const double> row, const DenseMatrix& b, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) {
        const double a = row[k];
        if (a == 0.0) continue;
        const auto brow = b.row(k);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += a * brow[j];
    }
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require_inner(a.cols(), b.rows(), "matmul");
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) row_times(a.row(i), b, out.row(i));
    return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    require_inner(a.rows(), b.rows(), "matmul_tn");
    DenseMatrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const auto arow = a.row(k);
        const auto brow = b.row(k);
        for (std::size_t i = 0; i < arow.size(); ++i) {
            const double v = arow[i];
            if (v == 0.0) continue;
            auto dst = out.row(i);
            for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += v * brow[j];
        }
    }
    return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    require_inner(a.cols(), b.cols(), "matmul_nt");
    DenseMatrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

DenseMatrix relu(const DenseMatrix& a) {
    DenseMatrix out = a;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    require_same_shape(a, b, "hadamard");
    DenseMatrix out = a;
    auto dst = out.data();
    const auto src = b.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
    return out;
}

double frobenius_sq(const DenseMatrix& a) {
    return dot(a.data(), a.data());
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void softmax_inplace(std::span<double> row) {
    if (row.empty()) return;
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : row) v /= total;
}

DenseMatrix softmax_rows(const DenseMatrix& logits) {
    DenseMatrix out = logits;
    for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
    return out;
}

double cross_entropy(const DenseMatrix& probs, std::span<const int> labels,
                     std::span<const NodeId> mask, std::size_t* clamped) {
    if (labels.size() != probs.rows()) {
        throw DimensionMismatch("cross_entropy: label count differs from probability rows");
    }
    if (mask.empty()) throw ValidationError("cross_entropy: empty mask");
    double total = 0.0;
    for (const NodeId v : mask) {
        double p = probs(v, static_cast<std::size_t>(labels[v]));
        if (p < kProbabilityFloor) {
            p = kProbabilityFloor;
            if (clamped != nullptr) ++*clamped;
        }
        total -= std::log(p);
    }
    return total / static_cast<double>(mask.size());
}

DenseMatrix dropout_mask(std::size_t rows, std::size_t cols, double rate, SeededRng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ValidationError("dropout_mask: rate must lie in [0, 1)");
    }
    DenseMatrix mask(rows, cols, 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& v : mask.data()) v = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
}

}  // namespace graphcal
