#pragma once

#include <span>
#include <vector>

#include "graphcal/numerics.hpp"

namespace graphcal {

/// One equal-width confidence bin (lower, upper].
struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;    // 0 when empty
    double confidence = 0.0;  // 0 when empty
};

struct EceReport {
    std::vector<CalibrationBin> bins;
    std::size_t total = 0;
    double ece = 0.0;
};

/// Bin index of a confidence under the ((m-1)/M, m/M] convention, with p = 0
/// placed in the first bin. Edges are the doubles m/M, so a confidence equal to
/// an emitted upper edge always lands in that bin.
std::size_t confidence_bin(double confidence, std::size_t num_bins);

/// Expected calibration error over M equal-width bins. Empty bins contribute 0.
EceReport ece(std::span<const double> confidences, const std::vector<bool>& correct,
              std::size_t num_bins);

/// Sum over bins of (count / total) * |accuracy - confidence|, in bin order.
double ece_from_bins(std::span<const CalibrationBin> bins, std::size_t total);

/// Same bins as ece(); the table behind a reliability diagram.
std::vector<CalibrationBin> reliability_data(std::span<const double> confidences,
                                             const std::vector<bool>& correct, std::size_t num_bins);

double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const NodeId> mask);

/// Mean negative log-likelihood of the true class; shares cross_entropy's clamping.
double nll(const DenseMatrix& probs, std::span<const int> labels, std::span<const NodeId> mask);

/// Confidence densities of correct and incorrect predictions. Both are
/// normalised by the total count, so each integrates to its subset's fraction.
struct HistogramData {
    std::vector<double> edges;  // num_bins + 1 values from 0 to 1
    std::vector<double> density_correct;
    std::vector<double> density_incorrect;
};

HistogramData confidence_histogram(std::span<const double> confidences,
                                   const std::vector<bool>& correct, std::size_t num_bins);

}  // namespace graphcal
