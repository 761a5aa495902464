#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seavae/layers.hpp"

namespace seavae {

/// A differentiable scalar function of a flat parameter vector together with
/// its analytic gradient. Layer fragments flatten [input, weight, bias].
struct Fragment {
    std::function<double(std::span<const double>)> loss;
    std::function<std::vector<double>(std::span<const double>)> gradient;
    std::vector<double> point;
};

struct GradCheckOptions {
    double step = 1e-3;
    std::size_t coordinates = 128;
    double tolerance = 1e-3;
    std::uint64_t seed = 0;
    /// Denominator floor for the relative error of near-zero gradients.
    double floor = 1e-8;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t coordinates_checked = 0;
    bool passed = false;
};

/// Compares the analytic gradient with central differences on a random
/// coordinate subset (all coordinates when the vector is small).
GradCheckReport grad_check(const Fragment& fragment, const GradCheckOptions& options = {});

/// Fragment for a single parameterized layer: loss = <layer(x), r> for a
/// fixed random projection r.
Fragment layer_fragment(const LayerParams& params, const Tensor4& input, Mode mode, std::uint64_t seed);
Fragment leaky_relu_fragment(const Tensor4& input, double slope, std::uint64_t seed);
Fragment sigmoid_fragment(const Tensor4& input, std::uint64_t seed);

}  // namespace seavae
