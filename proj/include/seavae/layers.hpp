#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "seavae/tensor.hpp"

namespace seavae {

using Rng = std::mt19937_64;

enum class LayerKind { Conv, TransposeConv, BatchNorm, Dense };
enum class Mode { Train, Eval };

std::string_view to_string(LayerKind kind);

/// (rows, cols) pair used for kernel size, stride and padding.
struct Extent {
    std::size_t rows = 0;
    std::size_t cols = 0;
    friend bool operator==(const Extent&, const Extent&) = default;
};

/// Parameters of one layer of the fixed layer set.
///
/// Weight layout by kind:
///   Conv          [out][in][kh][kw]
///   TransposeConv [in][out][kh][kw]
///   BatchNorm     gamma[channels] (bias holds beta)
///   Dense         [out][in]
struct LayerParams {
    LayerKind kind = LayerKind::Conv;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    Extent kernel{1, 1};
    Extent stride{1, 1};
    Extent padding{0, 0};
    Extent output_padding{0, 0};
    std::vector<double> weight;
    std::vector<double> bias;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    /// Throws ShapeError when buffer sizes disagree with the declared geometry.
    void validate() const;
};

LayerParams make_conv(std::size_t in, std::size_t out, Extent kernel, Extent stride, Extent padding);
LayerParams make_transpose_conv(std::size_t in, std::size_t out, Extent kernel, Extent stride, Extent padding,
                                Extent output_padding);
LayerParams make_batchnorm(std::size_t channels);
LayerParams make_dense(std::size_t in, std::size_t out);

/// Fan-in scaled normal init for conv/tconv/dense weights; zero bias. Batchnorm is left at gamma=1, beta=0.
void kaiming_init(LayerParams& p, Rng& rng, double leaky_slope);

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);
std::size_t transpose_conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                                       std::size_t output_pad);
Shape4 output_shape(const Shape4& in, const LayerParams& p);

/// Gradients produced by one layer's backward pass.
struct LayerGrads {
    Tensor4 input;
    std::vector<double> weight;
    std::vector<double> bias;
};

Tensor4 conv2d(const Tensor4& x, const LayerParams& p);
LayerGrads conv2d_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out);

Tensor4 transpose_conv2d(const Tensor4& x, const LayerParams& p);
LayerGrads transpose_conv2d_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out);

/// Flattens each batch item to a vector; output shape is N x out x 1 x 1.
Tensor4 dense(const Tensor4& x, const LayerParams& p);
LayerGrads dense_backward(const Tensor4& x, const LayerParams& p, const Tensor4& grad_out);

struct BatchNormCache {
    Mode mode = Mode::Eval;
    Tensor4 normalized;
    std::vector<double> inv_std;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;  // biased
};

/// Train mode normalizes with batch statistics (batch >= 2) and fills `cache`; the caller folds the
/// batch statistics into the running estimates with update_running_stats. Eval mode uses running stats.
Tensor4 batchnorm(const Tensor4& x, const LayerParams& p, Mode mode, BatchNormCache* cache = nullptr);
LayerGrads batchnorm_backward(const BatchNormCache& cache, const LayerParams& p, const Tensor4& grad_out);
void update_running_stats(LayerParams& p, const BatchNormCache& cache);

Tensor4 leaky_relu(const Tensor4& x, double slope);
Tensor4 leaky_relu_backward(const Tensor4& x, double slope, const Tensor4& grad_out);

Tensor4 sigmoid(const Tensor4& x);
/// Takes the sigmoid output, not its input.
Tensor4 sigmoid_backward(const Tensor4& y, const Tensor4& grad_out);

}  // namespace seavae
