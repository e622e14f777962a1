#include "graphcal/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "graphcal/error.hpp"

namespace graphcal {

namespace {

void check_inputs(std::span<const double> confidences, const std::vector<bool>& correct,
                  std::size_t num_bins) {
    if (num_bins == 0) throw ValidationError("bin count must be at least 1");
    if (confidences.size() != correct.size()) {
        throw DimensionMismatch("confidence and correctness arrays differ in length");
    }
    for (double p : confidences) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("confidence outside [0, 1]");
    }
}

}  // namespace

std::size_t confidence_bin(double confidence, std::size_t num_bins) {
    const double m = static_cast<double>(num_bins);
    const double scaled = std::ceil(confidence * m);
    std::size_t b = scaled <= 1.0 ? 0 : std::min(static_cast<std::size_t>(scaled) - 1, num_bins - 1);
    // p * M can round across an edge; settle against the edges b / M that reports emit.
    while (b > 0 && confidence <= static_cast<double>(b) / m) --b;
    while (b + 1 < num_bins && confidence > static_cast<double>(b + 1) / m) ++b;
    return b;
}

std::vector<CalibrationBin> reliability_data(std::span<const double> confidences,
                                             const std::vector<bool>& correct,
                                             std::size_t num_bins) {
    check_inputs(confidences, correct, num_bins);
    std::vector<CalibrationBin> bins(num_bins);
    std::vector<double> conf_sum(num_bins, 0.0);
    std::vector<std::size_t> hits(num_bins, 0);
    const double m = static_cast<double>(num_bins);
    for (std::size_t b = 0; b < num_bins; ++b) {
        bins[b].lower = static_cast<double>(b) / m;
        bins[b].upper = static_cast<double>(b + 1) / m;
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const std::size_t b = confidence_bin(confidences[i], num_bins);
        ++bins[b].count;
        conf_sum[b] += confidences[i];
        hits[b] += correct[i] ? 1 : 0;
    }
    for (std::size_t b = 0; b < num_bins; ++b) {
        if (bins[b].count == 0) continue;
        const double count = static_cast<double>(bins[b].count);
        bins[b].accuracy = static_cast<double>(hits[b]) / count;
        bins[b].confidence = conf_sum[b] / count;
    }
    return bins;
}

double ece_from_bins(std::span<const CalibrationBin> bins, std::size_t total) {
    double sum = 0.0;
    for (const auto& bin : bins) {
        if (bin.count == 0) continue;
        sum += static_cast<double>(bin.count) / static_cast<double>(total) *
               std::abs(bin.accuracy - bin.confidence);
    }
    return sum;
}

EceReport ece(std::span<const double> confidences, const std::vector<bool>& correct,
              std::size_t num_bins) {
    if (confidences.empty()) throw ValidationError("ece: no predictions to evaluate");
    EceReport report;
    report.bins = reliability_data(confidences, correct, num_bins);
    report.total = confidences.size();
    report.ece = ece_from_bins(report.bins, report.total);
    return report;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels,
                std::span<const NodeId> mask) {
    if (mask.empty()) throw ValidationError("accuracy: empty mask");
    std::size_t hits = 0;
    for (NodeId v : mask) hits += predicted[v] == labels[v] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(mask.size());
}

double nll(const DenseMatrix& probs, std::span<const int> labels, std::span<const NodeId> mask) {
    return cross_entropy(probs, labels, mask);
}

HistogramData confidence_histogram(std::span<const double> confidences,
                                   const std::vector<bool>& correct, std::size_t num_bins) {
    check_inputs(confidences, correct, num_bins);
    HistogramData hist;
    const double m = static_cast<double>(num_bins);
    for (std::size_t b = 0; b <= num_bins; ++b) hist.edges.push_back(static_cast<double>(b) / m);
    hist.density_correct.assign(num_bins, 0.0);
    hist.density_incorrect.assign(num_bins, 0.0);
    if (confidences.empty()) return hist;
    const double weight = m / static_cast<double>(confidences.size());  // 1 / (N * width)
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const std::size_t b = confidence_bin(confidences[i], num_bins);
        (correct[i] ? hist.density_correct : hist.density_incorrect)[b] += weight;
    }
    return hist;
}

}  // namespace graphcal
