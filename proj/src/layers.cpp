#include "seavae/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fmt/format.h>

namespace seavae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

// Sampling geometry shared by conv (image = input, grid = output) and
// transpose conv (image = output, grid = input).
struct Patches {
    std::size_t batch;
    std::size_t channels;
    std::size_t image_h, image_w;
    std::size_t grid_h, grid_w;
    Extent kernel, stride, padding;

    [[nodiscard]] std::size_t rows() const { return channels * kernel.rows * kernel.cols; }
    [[nodiscard]] std::size_t cols() const { return batch * grid_h * grid_w; }
};

RowMat im2col(std::span<const double> image, const Patches& g) {
    RowMat out = RowMat::Zero(static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    const std::size_t grid = g.grid_h * g.grid_w;
    const auto ph = static_cast<std::ptrdiff_t>(g.padding.rows);
    const auto pw = static_cast<std::ptrdiff_t>(g.padding.cols);
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel.rows; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel.cols; ++kj) {
                const std::size_t row = (c * g.kernel.rows + ki) * g.kernel.cols + kj;
                double* dst = out.row(static_cast<Eigen::Index>(row)).data();
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const double* src = image.data() + (n * g.channels + c) * g.image_h * g.image_w;
                    for (std::size_t oh = 0; oh < g.grid_h; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride.rows + ki) - ph;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.image_h)) {
                            continue;
                        }
                        for (std::size_t ow = 0; ow < g.grid_w; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride.cols + kj) - pw;
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.image_w)) {
                                continue;
                            }
                            dst[n * grid + oh * g.grid_w + ow] =
                                src[static_cast<std::size_t>(ih) * g.image_w + static_cast<std::size_t>(iw)];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void col2im(const RowMat& cols, const Patches& g, std::span<double> image) {
    const std::size_t grid = g.grid_h * g.grid_w;
    const auto ph = static_cast<std::ptrdiff_t>(g.padding.rows);
    const auto pw = static_cast<std::ptrdiff_t>(g.padding.cols);
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel.rows; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel.cols; ++kj) {
                const std::size_t row = (c * g.kernel.rows + ki) * g.kernel.cols + kj;
                const double* src = cols.row(static_cast<Eigen::Index>(row)).data();
                for (std::size_t n = 0; n < g.batch; ++n) {
                    double* dst = image.data() + (n * g.channels + c) * g.image_h * g.image_w;
                    for (std::size_t oh = 0; oh < g.grid_h; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride.rows + ki) - ph;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.image_h)) {
                            continue;
                        }
                        for (std::size_t ow = 0; ow < g.grid_w; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride.cols + kj) - pw;
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.image_w)) {
                                continue;
                            }
                            dst[static_cast<std::size_t>(ih) * g.image_w + static_cast<std::size_t>(iw)] +=
                                src[n * grid + oh * g.grid_w + ow];
                        }
                    }
                }
            }
        }
    }
}

// NCHW <-> (C x N*HW) channel-major matrix.
RowMat to_channel_major(const Tensor4& t) {
    const auto& s = t.shape();
    const std::size_t hw = s.h * s.w;
    RowMat m(static_cast<Eigen::Index>(s.c), static_cast<Eigen::Index>(s.n * hw));
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double* src = t.storage().data() + (n * s.c + c) * hw;
            std::copy(src, src + hw, m.row(static_cast<Eigen::Index>(c)).data() + n * hw);
        }
    }
    return m;
}

Tensor4 from_channel_major(const RowMat& m, Shape4 s) {
    Tensor4 t(s);
    const std::size_t hw = s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double* src = m.row(static_cast<Eigen::Index>(c)).data() + n * hw;
            std::copy(src, src + hw, t.storage().data() + (n * s.c + c) * hw);
        }
    }
    return t;
}

void require_kind(const LayerParams& p, LayerKind kind) {
    if (p.kind != kind) {
        throw std::invalid_argument(
            fmt::format("expected {} parameters, got {}", to_string(kind), to_string(p.kind)));
    }
}

void require_channels(const Tensor4& x, const LayerParams& p) {
    if (x.shape().c != p.in_channels) {
        throw ShapeError(fmt::format("{} input shape {} does not match parameter shape (in={}, out={}, k={}x{})",
                                     to_string(p.kind), x.shape().str(), p.in_channels, p.out_channels,
                                     p.kernel.rows, p.kernel.cols));
    }
}

Patches conv_patches(const Shape4& in, const LayerParams& p) {
    const Shape4 out = output_shape(in, p);
    return {in.n, in.c, in.h, in.w, out.h, out.w, p.kernel, p.stride, p.padding};
}

Patches tconv_patches(const Shape4& in, const LayerParams& p) {
    const Shape4 out = output_shape(in, p);
    return {in.n, p.out_channels, out.h, out.w, in.h, in.w, p.kernel, p.stride, p.padding};
}

std::vector<double> channel_sums(const Tensor4& t) {
    const auto& s = t.shape();
    std::vector<double> sums(s.c, 0.0);
    const std::size_t hw = s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const double* src = t.storage().data() + (n * s.c + c) * hw;
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                acc += src[i];
            }
            sums[c] += acc;
        }
    }
    return sums;
}

void add_channel_bias(Tensor4& t, const std::vector<double>& bias) {
    const auto& s = t.shape();
    const std::size_t hw = s.h * s.w;
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            double* dst = t.storage().data() + (n * s.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                dst[i] += bias[c];
            }
        }
    }
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::TransposeConv: return "transpose-conv";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Dense: return "dense";
    }
    return "unknown";
}

void LayerParams::validate() const {
    std::size_t expected_weight = 0;
    std::size_t expected_bias = out_channels;
    switch (kind) {
        case LayerKind::Conv:
        case LayerKind::TransposeConv:
            expected_weight = in_channels * out_channels * kernel.rows * kernel.cols;
            if (stride.rows == 0 || stride.cols == 0) {
                throw std::invalid_argument("stride must be >= 1");
            }
            if (kind == LayerKind::TransposeConv &&
                (output_padding.rows >= stride.rows || output_padding.cols >= stride.cols)) {
                throw std::invalid_argument(fmt::format("output padding {}x{} must be below stride {}x{}",
                                                        output_padding.rows, output_padding.cols, stride.rows,
                                                        stride.cols));
            }
            break;
        case LayerKind::BatchNorm:
            expected_weight = out_channels;
            if (running_mean.size() != out_channels || running_var.size() != out_channels) {
                throw ShapeError("batchnorm running statistics length mismatch");
            }
            for (double v : running_var) {
                if (!(v > 0.0)) {
                    throw std::invalid_argument("batchnorm running variance must be strictly positive");
                }
            }
            break;
        case LayerKind::Dense:
            expected_weight = in_channels * out_channels;
            break;
    }
    if (weight.size() != expected_weight || bias.size() != expected_bias) {
        throw ShapeError(fmt::format("{} weight/bias lengths {}/{} do not match declared {}/{}", to_string(kind),
                                     weight.size(), bias.size(), expected_weight, expected_bias));
    }
}

LayerParams make_conv(std::size_t in, std::size_t out, Extent kernel, Extent stride, Extent padding) {
    LayerParams p;
    p.kind = LayerKind::Conv;
    p.in_channels = in;
    p.out_channels = out;
    p.kernel = kernel;
    p.stride = stride;
    p.padding = padding;
    p.weight.assign(in * out * kernel.rows * kernel.cols, 0.0);
    p.bias.assign(out, 0.0);
    p.validate();
    return p;
}

LayerParams make_transpose_conv(std::size_t in, std::size_t out, Extent kernel, Extent stride, Extent padding,
                                Extent output_padding) {
    LayerParams p = make_conv(in, out, kernel, stride, padding);
    p.kind = LayerKind::TransposeConv;
    p.output_padding = output_padding;
    p.validate();
    return p;
}

LayerParams make_batchnorm(std::size_t channels) {
    LayerParams p;
    p.kind = LayerKind::BatchNorm;
    p.in_channels = channels;
    p.out_channels = channels;
    p.weight.assign(channels, 1.0);
    p.bias.assign(channels, 0.0);
    p.running_mean.assign(channels, 0.0);
    p.running_var.assign(channels, 1.0);
    return p;
}

LayerParams make_dense(std::size_t in, std::size_t out) {
    LayerParams p;
    p.kind = LayerKind::Dense;
    p.in_channels = in;
    p.out_channels = out;
    p.weight.assign(in * out, 0.0);
    p.bias.assign(out, 0.0);
    return p;
}

void kaiming_init(LayerParams& p, Rng& rng, double leaky_slope) {
    double fan_in = 0.0;
    switch (p.kind) {
        case LayerKind::Conv:
            fan_in = static_cast<double>(p.in_channels * p.kernel.rows * p.kernel.cols);
            break;
        case LayerKind::TransposeConv:
            // each output pixel receives in * k*k / (stride area) taps on average
            fan_in = static_cast<double>(p.in_channels * p.kernel.rows * p.kernel.cols) /
                     static_cast<double>(p.stride.rows * p.stride.cols);
            break;
        case LayerKind::Dense:
            fan_in = static_cast<double>(p.in_channels);
            break;
        case LayerKind::BatchNorm:
            return;
    }
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
    for (double& w : p.weight) {
        w = dist(rng);
    }
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (in + 2 * pad < kernel) {
        throw ShapeError(fmt::format("kernel {} larger than padded input {}", kernel, in + 2 * pad));
    }
    return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t transpose_conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                       std::size_t output_pad) {
    const std::size_t full = (in - 1) * stride + kernel + output_pad;
    if (full < 2 * pad + 1) {
        throw ShapeError("transpose conv output would be empty");
    }
    return full - 2 * pad;
}

Shape4 output_shape(const Shape4& in, const LayerParams& p) {
    switch (p.kind) {
        case LayerKind::Conv:
            return {in.n, p.out_channels, conv_output_size(in.h, p.kernel.rows, p.stride.rows, p.padding.rows),
                    conv_output_size(in.w, p.kernel.cols, p.stride.cols, p.padding.cols)};
        case LayerKind::TransposeConv:
            return {in.n, p.out_channels,
                    transpose_conv_output_size(in.h, p.kernel.rows, p.stride.rows, p.padding.rows,
                                               p.output_padding.rows),
                    transpose_conv_output_size(in.w, p.kernel.cols, p.stride.cols, p.padding.cols,
                                               p.output_padding.cols)};
        case LayerKind::BatchNorm:
            return in;
        case LayerKind::Dense:
            return {in.n, p.out_channels, 1, 1};
    }
    return in;
}

Tensor4 conv2d(const Tensor4& x, const LayerParams& p) {
    require_kind(p, LayerKind::Conv);
    require_channels(x, p);
    p.validate();
    const Patches g = conv_patches(x.shape(), p);
    const RowMat cols = im2col(x.data(), g);
    ConstRowMap w(p.weight.data(), static_cast<Eigen::Index>(p.out_channels), static_cast<Eigen::Index>(g.rows()));
    const RowMat y = w * cols;
    Tensor4 out = from_channel_major(y, output_shape(x.shape(), p));
    add_channel_bias(out, p.bias);
    return out;
}

LayerGrads conv2d_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out) {
    require_kind(p, LayerKind::Conv);
    require_channels(x, p);
    if (grad_out.shape() != output_shape(x.shape(), p)) {
        throw ShapeError(fmt::format("conv gradient shape {} does not match output shape {}",
                                     grad_out.shape().str(), output_shape(x.shape(), p).str()));
    }
    const Patches g = conv_patches(x.shape(), p);
    const RowMat cols = im2col(x.data(), g);
    const RowMat gy = to_channel_major(grad_out);
    ConstRowMap w(p.weight.data(), static_cast<Eigen::Index>(p.out_channels), static_cast<Eigen::Index>(g.rows()));

    LayerGrads grads;
    grads.weight.resize(p.weight.size());
    RowMap gw(grads.weight.data(), w.rows(), w.cols());
    gw.noalias() = gy * cols.transpose();
    grads.bias = channel_sums(grad_out);

    const RowMat gcols = w.transpose() * gy;
    grads.input = Tensor4(x.shape());
    col2im(gcols, g, grads.input.data());
    return grads;
}

Tensor4 transpose_conv2d(const Tensor4& x, const LayerParams& p) {
    require_kind(p, LayerKind::TransposeConv);
    require_channels(x, p);
    p.validate();
    const Patches g = tconv_patches(x.shape(), p);
    ConstRowMap w(p.weight.data(), static_cast<Eigen::Index>(p.in_channels), static_cast<Eigen::Index>(g.rows()));
    const RowMat cols = w.transpose() * to_channel_major(x);
    Tensor4 out(output_shape(x.shape(), p));
    col2im(cols, g, out.data());
    add_channel_bias(out, p.bias);
    return out;
}

LayerGrads transpose_conv2d_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out) {
    require_kind(p, LayerKind::TransposeConv);
    require_channels(x, p);
    if (grad_out.shape() != output_shape(x.shape(), p)) {
        throw ShapeError(fmt::format("transpose conv gradient shape {} does not match output shape {}",
                                     grad_out.shape().str(), output_shape(x.shape(), p).str()));
    }
    const Patches g = tconv_patches(x.shape(), p);
    ConstRowMap w(p.weight.data(), static_cast<Eigen::Index>(p.in_channels), static_cast<Eigen::Index>(g.rows()));
    const RowMat gcols = im2col(grad_out.data(), g);
    const RowMat xm = to_channel_major(x);

    LayerGrads grads;
    grads.weight.resize(p.weight.size());
    RowMap gw(grads.weight.data(), w.rows(), w.cols());
    gw.noalias() = xm * gcols.transpose();
    grads.bias = channel_sums(grad_out);
    grads.input = from_channel_major(w * gcols, x.shape());
    return grads;
}

Tensor4 dense(const Tensor4& x, const LayerParams& p) {
    require_kind(p, LayerKind::Dense);
    const auto& s = x.shape();
    if (s.per_item() != p.in_channels) {
        throw ShapeError(fmt::format("dense input shape {} has {} features, parameters expect {}", s.str(),
                                     s.per_item(), p.in_channels));
    }
    p.validate();
    ConstRowMap xm(x.storage().data(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(p.in_channels));
    ConstRowMap w(p.weight.data(), static_cast<Eigen::Index>(p.out_channels),
                  static_cast<Eigen::Index>(p.in_channels));
    Tensor4 out({s.n, p.out_channels, 1, 1});
    RowMap y(out.storage().data(), static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(p.out_channels));
    y.noalias() = xm * w.transpose();
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t o = 0; o < p.out_channels; ++o) {
            y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o)) += p.bias[o];
        }
    }
    return out;
}

LayerGrads dense_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out) {
    require_kind(p, LayerKind::Dense);
    const auto& s = x.shape();
    if (s.per_item() != p.in_channels || grad_out.size() != s.n * p.out_channels) {
        throw ShapeError(fmt::format("dense backward shapes {} / {} do not match parameters ({} -> {})", s.str(),
                                     grad_out.shape().str(), p.in_channels, p.out_channels));
    }
    const auto n = static_cast<Eigen::Index>(s.n);
    const auto in = static_cast<Eigen::Index>(p.in_channels);
    const auto out = static_cast<Eigen::Index>(p.out_channels);
    ConstRowMap xm(x.storage().data(), n, in);
    ConstRowMap w(p.weight.data(), out, in);
    ConstRowMap gy(grad_out.storage().data(), n, out);

    LayerGrads grads;
    grads.weight.resize(p.weight.size());
    RowMap gw(grads.weight.data(), out, in);
    gw.noalias() = gy.transpose() * xm;
    grads.bias.assign(p.out_channels, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index o = 0; o < out; ++o) {
            grads.bias[static_cast<std::size_t>(o)] += gy(i, o);
        }
    }
    grads.input = Tensor4(s);
    RowMap gx(grads.input.storage().data(), n, in);
    gx.noalias() = gy * w;
    return grads;
}

Tensor4 batchnorm(const Tensor4& x, const LayerParams& p, Mode mode, BatchNormCache* cache) {
    require_kind(p, LayerKind::BatchNorm);
    require_channels(x, p);
    p.validate();
    const auto& s = x.shape();
    const std::size_t hw = s.h * s.w;
    const std::size_t count = s.n * hw;
    if (mode == Mode::Train && s.n < 2) {
        throw std::invalid_argument(
            fmt::format("batchnorm in train mode needs batch >= 2 (variance undefined), got {}", s.n));
    }

    std::vector<double> mean(s.c), var(s.c), inv_std(s.c);
    if (mode == Mode::Train) {
        for (std::size_t c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const double* src = x.storage().data() + (n * s.c + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    acc += src[i];
                }
            }
            mean[c] = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t n = 0; n < s.n; ++n) {
                const double* src = x.storage().data() + (n * s.c + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = src[i] - mean[c];
                    sq += d * d;
                }
            }
            var[c] = sq / static_cast<double>(count);
        }
    } else {
        mean = p.running_mean;
        var = p.running_var;
    }
    for (std::size_t c = 0; c < s.c; ++c) {
        inv_std[c] = 1.0 / std::sqrt(var[c] + p.eps);
    }

    Tensor4 normalized(s);
    Tensor4 out(s);
    for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const std::size_t base = (n * s.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double xhat = (x[base + i] - mean[c]) * inv_std[c];
                normalized[base + i] = xhat;
                out[base + i] = p.weight[c] * xhat + p.bias[c];
            }
        }
    }
    if (cache != nullptr) {
        cache->mode = mode;
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
        cache->batch_mean = std::move(mean);
        cache->batch_var = std::move(var);
    }
    return out;
}

LayerGrads batchnorm_backward(const BatchNormCache& cache, const LayerParams& p, const Tensor4& grad_out) {
    require_kind(p, LayerKind::BatchNorm);
    const auto& s = cache.normalized.shape();
    if (grad_out.shape() != s) {
        throw ShapeError(fmt::format("batchnorm gradient shape {} does not match {}", grad_out.shape().str(), s.str()));
    }
    const std::size_t hw = s.h * s.w;
    const auto count = static_cast<double>(s.n * hw);

    LayerGrads grads;
    grads.weight.assign(s.c, 0.0);
    grads.bias.assign(s.c, 0.0);
    grads.input = Tensor4(s);
    for (std::size_t c = 0; c < s.c; ++c) {
        double sum_g = 0.0;
        double sum_g_xhat = 0.0;
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_g += grad_out[base + i];
                sum_g_xhat += grad_out[base + i] * cache.normalized[base + i];
            }
        }
        grads.weight[c] = sum_g_xhat;
        grads.bias[c] = sum_g;
        const double gamma = p.weight[c];
        const double k = gamma * cache.inv_std[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                if (cache.mode == Mode::Train) {
                    grads.input[base + i] =
                        k * (grad_out[base + i] - sum_g / count - cache.normalized[base + i] * sum_g_xhat / count);
                } else {
                    grads.input[base + i] = k * grad_out[base + i];
                }
            }
        }
    }
    return grads;
}

void update_running_stats(LayerParams& p, const BatchNormCache& cache) {
    if (cache.mode != Mode::Train) {
        return;
    }
    const auto& s = cache.normalized.shape();
    const auto count = static_cast<double>(s.n * s.h * s.w);
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    for (std::size_t c = 0; c < p.out_channels; ++c) {
        p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * cache.batch_mean[c];
        p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * cache.batch_var[c] * unbias;
    }
}

Tensor4 leaky_relu(const Tensor4& x, double slope) {
    Tensor4 out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
    }
    return out;
}

Tensor4 leaky_relu_backward(const Tensor4& x, double slope, const Tensor4& grad_out) {
    if (grad_out.shape() != x.shape()) {
        throw ShapeError(fmt::format("leaky relu gradient shape {} vs input {}", grad_out.shape().str(), x.shape().str()));
    }
    Tensor4 out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > 0.0 ? grad_out[i] : slope * grad_out[i];
    }
    return out;
}

Tensor4 sigmoid(const Tensor4& x) {
    Tensor4 out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        // split by sign so exp never overflows
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    return out;
}

Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& grad_out) {
    if (grad_out.shape() != y.shape()) {
        throw ShapeError("sigmoid gradient shape mismatch");
    }
    Tensor4 out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = grad_out[i] * y[i] * (1.0 - y[i]);
    }
    return out;
}

}  // namespace seavae
