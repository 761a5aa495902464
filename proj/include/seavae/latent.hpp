#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seavae/layers.hpp"

namespace seavae {

/// Row-major N x dim matrix of points.
struct PointSet {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    PointSet() = default;
    PointSet(std::size_t rows, std::size_t cols) : n(rows), dim(cols), values(rows * cols, 0.0) {}
    PointSet(std::size_t rows, std::size_t cols, std::vector<double> v);

    [[nodiscard]] std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
    std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
    double& at(std::size_t i, std::size_t j) { return values[i * dim + j]; }
    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[i * dim + j]; }
    [[nodiscard]] bool all_finite() const;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

struct TsneOptions {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    double learning_rate = 200.0;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    /// Allowed deviation of each row's entropy (bits) from log2(perplexity); the
    /// search runs to a hundredth of it, which keeps 2^H within 1e-3 of perplexity 30.
    double perplexity_tolerance = 1e-3;
    std::uint64_t seed = 0;
};

/// Row-conditional affinities p_{j|i} (rows sum to 1, zero diagonal).
struct Affinities {
    PointSet conditional;
    std::vector<double> entropy_bits;
    std::vector<double> beta;  // precision 1/(2 sigma_i^2) per row
};

Affinities tsne_affinities(const PointSet& points, double perplexity, double tolerance = 1e-3);

struct TsneResult {
    PointSet embedding;
    /// KL(P || Q) against the unexaggerated P after every iteration.
    std::vector<double> kl_trace;
    std::vector<double> entropy_bits;
};

/// Exact O(N^2) t-SNE to two dimensions.
TsneResult tsne_reduce(const PointSet& points, const TsneOptions& options = {});

struct KDistance {
    double epsilon = 0.0;
    bool degenerate = false;
    /// k-th neighbour distances sorted descending.
    std::vector<double> curve;
    std::size_t elbow_index = 0;
};

/// Elbow of the descending k-distance curve: the point furthest from the chord
/// between its endpoints, with both axes scaled to [0, 1].
KDistance k_distance_epsilon(const PointSet& points, std::size_t k);

enum class PointRole { Core, Border, Noise };

std::string to_string(PointRole role);

inline constexpr int kNoise = -1;

struct DbscanParams {
    double epsilon = 0.0;
    std::size_t min_pts = 4;
    void validate() const;
};

struct ClusterAssignment {
    std::vector<int> labels;
    std::vector<PointRole> roles;
    std::size_t cluster_count = 0;
};

/// Neighbourhoods are closed balls (distance <= epsilon) and include the point
/// itself. Points are visited in index order; a border point reachable from
/// several clusters joins the first one discovered.
ClusterAssignment dbscan(const PointSet& points, const DbscanParams& params);

/// Gaussian product-kernel density on 2-D points.
struct KdeModel {
    PointSet points;
    double bandwidth = 1.0;

    [[nodiscard]] double density(double x, double y) const;
    [[nodiscard]] double log_density(double x, double y) const;
};

struct KdeFit {
    KdeModel model;
    std::vector<double> grid;
    /// Mean held-out log-likelihood per grid entry.
    std::vector<double> cv_log_likelihood;
    std::size_t chosen = 0;
};

std::vector<double> log_spaced(double lo, double hi, std::size_t count);

/// Default bandwidth grid: 30 log-spaced values in [0.01, 10].
std::vector<double> default_bandwidth_grid();

/// k-fold cross-validated bandwidth selection (seeded shuffled folds), then a
/// fit on all points with the winning bandwidth.
KdeFit kde_fit(const PointSet& points, std::span<const double> grid, std::size_t folds = 20, std::uint64_t seed = 0);

std::vector<double> kde_score(const KdeModel& model, const PointSet& queries);

/// Linear interpolation between order statistics (rank p/100 * (n-1)).
double percentile(std::span<const double> scores, double p);

enum class FlagSide { Below, Above };

struct PercentileFlags {
    std::vector<bool> flags;
    double threshold = 0.0;
    [[nodiscard]] std::size_t count() const;
};

/// Flags scores strictly below (or above) the p-th percentile.
PercentileFlags percentile_flag(std::span<const double> scores, double p, FlagSide side);

}  // namespace seavae
