#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seavae/adam.hpp"
#include "seavae/gradcheck.hpp"
#include "seavae/layers.hpp"

namespace seavae {

struct VaeConfig {
    std::size_t latent_dim = 64;
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 80;
    std::array<std::size_t, 5> widths{32, 64, 128, 256, 512};
    double leaky_slope = 0.2;
    double learning_rate = 1e-3;
    std::size_t patience = 3;
    std::size_t max_epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

/// Approximate posterior q(z|x) = N(mu, diag(sigma^2)) for one image, plus an optional sample.
struct LatentCode {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<double> z;
};

/// Negative ELBO per image averaged over the batch; reconstruction uses a
/// unit-variance Gaussian likelihood with constants dropped.
struct LossTerms {
    double total = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

/// Closed-form KL(N(mu, sigma^2) || N(0, I)). Throws on non-positive sigma.
double kl_closed_form(std::span<const double> mu, std::span<const double> sigma);

/// z = mu + sigma * eps with eps ~ N(0, I) drawn from rng.
std::vector<double> sample_latent(const LatentCode& code, Rng& rng);

/// Named view of one parameter or buffer tensor.
struct NamedBuffer {
    std::string name;
    std::span<double> values;
    bool trainable = true;
};

using Gradients = std::vector<std::vector<double>>;

/// Convolutional VAE: five strided conv+batchnorm+leaky-ReLU blocks, a dense
/// head producing (mu, log-variance), and a mirrored transpose-conv decoder
/// ending in a sigmoid.
class Vae {
public:
    explicit Vae(VaeConfig config);

    [[nodiscard]] const VaeConfig& config() const { return config_; }

    /// Eval-mode encoding; one code per batch item (z left empty).
    [[nodiscard]] std::vector<LatentCode> encode(const Tensor4& images) const;
    /// Eval-mode decoding of an N x d x 1 x 1 latent batch.
    [[nodiscard]] Tensor4 decode(const Tensor4& latents) const;
    [[nodiscard]] Tensor4 decode(std::span<const double> z) const;
    /// encode -> mu -> decode, deterministic.
    [[nodiscard]] Tensor4 reconstruct(const Tensor4& images) const;

    /// Negative ELBO with one reparameterized sample per image. Train mode uses
    /// batch statistics (running stats untouched); eval mode uses running stats.
    LossTerms elbo_loss(const Tensor4& images, Rng& rng, Mode mode = Mode::Train) const;

    /// Loss with explicit standard-normal noise (N x d). When `grads` is
    /// non-null it receives d(loss)/d(parameter) for every trainable buffer in
    /// parameters() order. `update_stats` folds batch statistics into the
    /// running estimates (train mode only).
    LossTerms forward_backward(const Tensor4& images, const Tensor4& noise, Mode mode, Gradients* grads,
                               bool update_stats = false);

    /// Trainable parameters followed by batchnorm running statistics, in a fixed declaration order.
    std::vector<NamedBuffer> buffers();
    [[nodiscard]] std::vector<NamedBuffer> buffers() const;
    [[nodiscard]] std::size_t trainable_count() const;

    /// Encoder output (mu, log-variance) as N x 2d x 1 x 1.
    [[nodiscard]] Tensor4 encoder_head(const Tensor4& images, Mode mode) const;
    /// Backpropagates d(loss)/d(head) through the encoder. Returns the input
    /// gradient; `grads` receives the first kEncoderTrainable buffer gradients.
    Tensor4 encoder_backward(const Tensor4& images, Mode mode, const Tensor4& grad_head, Gradients* grads) const;

    /// Leading trainable buffers belonging to the encoder (5 conv+bn blocks and the head).
    static constexpr std::size_t kEncoderTrainable = 22;

    [[nodiscard]] Shape4 input_shape(std::size_t batch) const {
        return {batch, config_.channels, config_.height, config_.width};
    }

private:
    struct Tape;
    struct EncoderGrads {
        std::array<LayerGrads, 5> conv;
        std::array<LayerGrads, 5> bn;
        LayerGrads head;
        Tensor4 input;
    };
    EncoderGrads backprop_encoder(const Tape& tape, const Tensor4& g_head) const;
    LossTerms run(const Tensor4& images, const Tensor4& noise, Mode mode, Tape* tape) const;
    void check_input(const Tensor4& images) const;
    Tensor4 encode_head(const Tensor4& images, Mode mode, Tape* tape) const;
    Tensor4 decode_impl(const Tensor4& latents, Mode mode, Tape* tape) const;

    VaeConfig config_;
    std::array<Extent, 6> spatial_{};  // encoder feature sizes, input first
    std::array<LayerParams, 5> enc_conv_;
    std::array<LayerParams, 5> enc_bn_;
    LayerParams enc_head_;
    LayerParams dec_in_;
    std::array<LayerParams, 5> dec_tconv_;
    std::array<LayerParams, 4> dec_bn_;
};

/// Fragment over a sampled subset of trainable parameters; the loss is the
/// train-mode negative ELBO with fixed noise, so finite differences see the
/// same reparameterization draw.
Fragment elbo_fragment(const Vae& model, const Tensor4& images, const Tensor4& noise,
                       std::span<const std::size_t> buffer_indices);

/// Fragment over the input and all encoder parameters of a small encoder
/// stack; loss is a fixed random projection of (mu, log-variance).
Fragment encoder_fragment(const Vae& model, const Tensor4& images, std::uint64_t seed);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_reconstruction = 0.0;
    double train_kl = 0.0;
    double val_loss = 0.0;
    double val_reconstruction = 0.0;
    double val_kl = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

struct TrainingHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
};

/// Trained model plus the metadata persisted in a .vaeckpt file.
struct Checkpoint {
    Vae model;
    TrainingHistory history;
};

struct TrainCallbacks {
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam on the negative ELBO with independent 50% horizontal/vertical flips
/// per sample per epoch. Stops once validation loss fails to improve for more
/// than `patience` consecutive epochs (or at max_epochs) and returns the
/// best-validation weights.
Checkpoint train(const Tensor4& train_images, const Tensor4& val_images, const VaeConfig& config,
                 const TrainCallbacks& callbacks = {});

/// Flip one CHW image in place.
void flip_horizontal(std::span<double> image, std::size_t channels, std::size_t height, std::size_t width);
void flip_vertical(std::span<double> image, std::size_t channels, std::size_t height, std::size_t width);

}  // namespace seavae
