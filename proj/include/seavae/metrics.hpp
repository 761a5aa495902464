#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace seavae {

/// Outliers are the positive class.
struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
};

Confusion confusion(const std::vector<bool>& predicted, const std::vector<bool>& truth);

/// Zero denominators give 0 and log a warning.
double precision(const Confusion& c);
double recall(const Confusion& c);
double f1_score(const Confusion& c);

struct PrPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct PrCurve {
    /// One point per unique score, thresholds descending (predict positive when score >= threshold).
    std::vector<PrPoint> points;
    /// Step-wise: sum of precision * (recall gain) over the points.
    double average_precision = 0.0;
};

/// Needs at least one positive and one negative label.
PrCurve pr_curve(std::span<const double> scores, const std::vector<bool>& labels);

/// Shared-bin histogram overlap: sum over bins of min(p_a, p_b) with both
/// histograms normalized, over `bins` equal-width bins spanning both samples.
/// bins = 0 picks Sturges' rule on the smaller sample, so a dozen outliers
/// are not spread thinly over mostly empty bins.
double overlap_coefficient(std::span<const double> a, std::span<const double> b, std::size_t bins = 0);

/// ceil(log2(n) + 1)
std::size_t sturges_bins(std::size_t n);

}  // namespace seavae
