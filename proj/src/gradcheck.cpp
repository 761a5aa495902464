#include "seavae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seavae {

GradCheckReport grad_check(const Fragment& fragment, const GradCheckOptions& options) {
    const std::vector<double> analytic = fragment.gradient(fragment.point);
    const std::size_t dims = fragment.point.size();

    std::vector<std::size_t> coords(dims);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (dims > options.coordinates) {
        Rng rng(options.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.coordinates);
        std::sort(coords.begin(), coords.end());
    }

    GradCheckReport report;
    std::vector<double> probe = fragment.point;
    for (std::size_t i : coords) {
        const double original = probe[i];
        probe[i] = original + options.step;
        const double up = fragment.loss(probe);
        probe[i] = original - options.step;
        const double down = fragment.loss(probe);
        probe[i] = original;
        const double numeric = (up - down) / (2.0 * options.step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
        const double rel = std::abs(analytic[i] - numeric) / denom;
        if (rel > report.max_relative_error || report.coordinates_checked == 0) {
            report.max_relative_error = rel;
            report.worst_coordinate = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
        ++report.coordinates_checked;
    }
    report.passed = report.max_relative_error < options.tolerance;
    return report;
}

namespace {

std::vector<double> random_projection(std::size_t n, std::uint64_t seed) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> r(n);
    for (double& v : r) {
        v = dist(rng);
    }
    return r;
}

struct Unpacked {
    Tensor4 input;
    LayerParams params;
};

Unpacked unpack(std::span<const double> flat, const Shape4& shape, const LayerParams& templ) {
    Unpacked u{Tensor4(shape), templ};
    std::size_t off = 0;
    std::copy_n(flat.begin(), shape.count(), u.input.storage().begin());
    off += shape.count();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), templ.weight.size(), u.params.weight.begin());
    off += templ.weight.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), templ.bias.size(), u.params.bias.begin());
    return u;
}

Tensor4 apply(const Unpacked& u, Mode mode, BatchNormCache* cache) {
    switch (u.params.kind) {
        case LayerKind::Conv: return conv2d(u.input, u.params);
        case LayerKind::TransposeConv: return transpose_conv2d(u.input, u.params);
        case LayerKind::Dense: return dense(u.input, u.params);
        case LayerKind::BatchNorm: return batchnorm(u.input, u.params, mode, cache);
    }
    return {};
}

}  // namespace

Fragment layer_fragment(const LayerParams& params, const Tensor4& input, Mode mode, std::uint64_t seed) {
    const Shape4 shape = input.shape();
    const std::vector<double> projection = random_projection(output_shape(shape, params).count(), seed);

    Fragment f;
    f.point.reserve(input.size() + params.weight.size() + params.bias.size());
    f.point.insert(f.point.end(), input.storage().begin(), input.storage().end());
    f.point.insert(f.point.end(), params.weight.begin(), params.weight.end());
    f.point.insert(f.point.end(), params.bias.begin(), params.bias.end());

    f.loss = [=](std::span<const double> flat) {
        const Unpacked u = unpack(flat, shape, params);
        return dot(apply(u, mode, nullptr).data(), projection);
    };
    f.gradient = [=](std::span<const double> flat) {
        const Unpacked u = unpack(flat, shape, params);
        BatchNormCache cache;
        const Tensor4 out = apply(u, mode, &cache);
        const Tensor4 grad_out(out.shape(), projection);
        LayerGrads g;
        switch (params.kind) {
            case LayerKind::Conv: g = conv2d_backward(u.input, u.params, grad_out); break;
            case LayerKind::TransposeConv: g = transpose_conv2d_backward(u.input, u.params, grad_out); break;
            case LayerKind::Dense: g = dense_backward(u.input, u.params, grad_out); break;
            case LayerKind::BatchNorm: g = batchnorm_backward(cache, u.params, grad_out); break;
        }
        std::vector<double> flat_grad;
        flat_grad.reserve(flat.size());
        flat_grad.insert(flat_grad.end(), g.input.storage().begin(), g.input.storage().end());
        flat_grad.insert(flat_grad.end(), g.weight.begin(), g.weight.end());
        flat_grad.insert(flat_grad.end(), g.bias.begin(), g.bias.end());
        return flat_grad;
    };
    return f;
}

Fragment leaky_relu_fragment(const Tensor4& input, double slope, std::uint64_t seed) {
    const Shape4 shape = input.shape();
    const std::vector<double> projection = random_projection(shape.count(), seed);
    Fragment f;
    f.point = input.storage();
    f.loss = [=](std::span<const double> flat) {
        const Tensor4 x(shape, std::vector<double>(flat.begin(), flat.end()));
        return dot(leaky_relu(x, slope).data(), projection);
    };
    f.gradient = [=](std::span<const double> flat) {
        const Tensor4 x(shape, std::vector<double>(flat.begin(), flat.end()));
        return leaky_relu_backward(x, slope, Tensor4(shape, projection)).storage();
    };
    return f;
}

Fragment sigmoid_fragment(const Tensor4& input, std::uint64_t seed) {
    const Shape4 shape = input.shape();
    const std::vector<double> projection = random_projection(shape.count(), seed);
    Fragment f;
    f.point = input.storage();
    f.loss = [=](std::span<const double> flat) {
        const Tensor4 x(shape, std::vector<double>(flat.begin(), flat.end()));
        return dot(sigmoid(x).data(), projection);
    };
    f.gradient = [=](std::span<const double> flat) {
        const Tensor4 x(shape, std::vector<double>(flat.begin(), flat.end()));
        return sigmoid_backward(sigmoid(x), Tensor4(shape, projection)).storage();
    };
    return f;
}

}  // namespace seavae
