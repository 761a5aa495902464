#include "seavae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>
#include <spdlog/spdlog.h>

namespace seavae {

namespace {

constexpr double kLogVarMin = -20.0;
constexpr double kLogVarMax = 20.0;

Extent conv_extent(Extent in) {
    return {conv_output_size(in.rows, 3, 2, 1), conv_output_size(in.cols, 3, 2, 1)};
}

std::size_t output_pad_for(std::size_t in, std::size_t target) {
    const std::size_t base = transpose_conv_output_size(in, 3, 2, 1, 0);
    if (target < base || target - base >= 2) {
        throw ShapeError(fmt::format("decoder cannot map {} back to {} with stride 2", in, target));
    }
    return target - base;
}

}  // namespace

void VaeConfig::validate() const {
    if (latent_dim == 0) {
        throw std::invalid_argument("latent_dim must be positive");
    }
    if (channels == 0 || height < 32 || width < 32) {
        throw std::invalid_argument(fmt::format("input shape {}x{}x{} invalid: need C>=1 and H,W>=32", channels,
                                                height, width));
    }
    for (std::size_t w : widths) {
        if (w == 0) {
            throw std::invalid_argument("encoder channel widths must be positive");
        }
    }
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
        throw std::invalid_argument("leaky_slope must lie in (0, 1)");
    }
    if (!(learning_rate > 0.0) || batch_size < 2 || max_epochs == 0) {
        throw std::invalid_argument("learning_rate > 0, batch_size >= 2 and max_epochs >= 1 required");
    }
}

void to_json(nlohmann::json& j, const VaeConfig& c) {
    j = nlohmann::json{{"latent_dim", c.latent_dim},
                       {"channels", c.channels},
                       {"height", c.height},
                       {"width", c.width},
                       {"widths", c.widths},
                       {"leaky_slope", c.leaky_slope},
                       {"learning_rate", c.learning_rate},
                       {"patience", c.patience},
                       {"max_epochs", c.max_epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("channels").get_to(c.channels);
    j.at("height").get_to(c.height);
    j.at("width").get_to(c.width);
    j.at("widths").get_to(c.widths);
    j.at("leaky_slope").get_to(c.leaky_slope);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("patience").get_to(c.patience);
    j.at("max_epochs").get_to(c.max_epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"train_reconstruction", r.train_reconstruction},
                       {"train_kl", r.train_kl},
                       {"val_loss", r.val_loss},
                       {"val_reconstruction", r.val_reconstruction},
                       {"val_kl", r.val_kl}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
    j.at("epoch").get_to(r.epoch);
    j.at("train_loss").get_to(r.train_loss);
    j.at("train_reconstruction").get_to(r.train_reconstruction);
    j.at("train_kl").get_to(r.train_kl);
    j.at("val_loss").get_to(r.val_loss);
    j.at("val_reconstruction").get_to(r.val_reconstruction);
    j.at("val_kl").get_to(r.val_kl);
}

double kl_closed_form(std::span<const double> mu, std::span<const double> sigma) {
    if (mu.size() != sigma.size()) {
        throw ShapeError(fmt::format("mu has length {}, sigma {}", mu.size(), sigma.size()));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        if (!(sigma[k] > 0.0)) {
            throw std::invalid_argument(fmt::format("sigma[{}] = {} is not strictly positive", k, sigma[k]));
        }
        const double var = sigma[k] * sigma[k];
        acc += std::log(var) - var - mu[k] * mu[k] + 1.0;
    }
    return -0.5 * acc;
}

std::vector<double> sample_latent(const LatentCode& code, Rng& rng) {
    if (code.mu.size() != code.sigma.size()) {
        throw ShapeError("latent code mu/sigma length mismatch");
    }
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> z(code.mu.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] = code.mu[k] + code.sigma[k] * dist(rng);
    }
    return z;
}

struct Vae::Tape {
    std::array<Tensor4, 5> enc_in;
    std::array<BatchNormCache, 5> enc_bn;
    std::array<Tensor4, 5> enc_pre;  // batchnorm output, leaky-relu input
    Tensor4 head_in;
    Tensor4 head;
    Tensor4 noise;
    std::vector<double> sigma;
    std::vector<bool> clamped;
    Tensor4 z;
    Tensor4 dec_pre;  // dense output reshaped, leaky-relu input
    std::array<Tensor4, 5> dec_in;
    std::array<BatchNormCache, 4> dec_bn;
    std::array<Tensor4, 4> dec_bn_out;
    Tensor4 output;
};

Vae::Vae(VaeConfig config) : config_(std::move(config)) {
    config_.validate();
    spatial_[0] = {config_.height, config_.width};
    for (std::size_t i = 0; i < 5; ++i) {
        spatial_[i + 1] = conv_extent(spatial_[i]);
    }
    Rng rng(config_.seed);
    const double slope = config_.leaky_slope;
    std::size_t in = config_.channels;
    for (std::size_t i = 0; i < 5; ++i) {
        enc_conv_[i] = make_conv(in, config_.widths[i], {3, 3}, {2, 2}, {1, 1});
        kaiming_init(enc_conv_[i], rng, slope);
        enc_bn_[i] = make_batchnorm(config_.widths[i]);
        in = config_.widths[i];
    }
    const std::size_t flat = config_.widths[4] * spatial_[5].rows * spatial_[5].cols;
    enc_head_ = make_dense(flat, 2 * config_.latent_dim);
    kaiming_init(enc_head_, rng, 1.0);
    dec_in_ = make_dense(config_.latent_dim, flat);
    kaiming_init(dec_in_, rng, slope);
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t level = 5 - i;  // spatial_[level] -> spatial_[level - 1]
        const std::size_t cin = config_.widths[level - 1];
        const std::size_t cout = level >= 2 ? config_.widths[level - 2] : config_.channels;
        const Extent op{output_pad_for(spatial_[level].rows, spatial_[level - 1].rows),
                        output_pad_for(spatial_[level].cols, spatial_[level - 1].cols)};
        dec_tconv_[i] = make_transpose_conv(cin, cout, {3, 3}, {2, 2}, {1, 1}, op);
        kaiming_init(dec_tconv_[i], rng, i < 4 ? slope : 1.0);
        if (i < 4) {
            dec_bn_[i] = make_batchnorm(cout);
        }
    }
}

void Vae::check_input(const Tensor4& images) const {
    const auto& s = images.shape();
    if (s.c != config_.channels || s.h != config_.height || s.w != config_.width || s.n == 0) {
        throw ShapeError(fmt::format("image batch {} does not match model input Nx{}x{}x{}", s.str(),
                                     config_.channels, config_.height, config_.width));
    }
}

Tensor4 Vae::encode_head(const Tensor4& images, Mode mode, Tape* tape) const {
    Tensor4 h = images;
    for (std::size_t i = 0; i < 5; ++i) {
        Tensor4 a = conv2d(h, enc_conv_[i]);
        BatchNormCache* cache = tape != nullptr ? &tape->enc_bn[i] : nullptr;
        Tensor4 b = batchnorm(a, enc_bn_[i], mode, cache);
        Tensor4 next = leaky_relu(b, config_.leaky_slope);
        if (tape != nullptr) {
            tape->enc_in[i] = std::move(h);
            tape->enc_pre[i] = std::move(b);
        }
        h = std::move(next);
    }
    Tensor4 head = dense(h, enc_head_);
    if (tape != nullptr) {
        tape->head_in = std::move(h);
    }
    return head;
}

Tensor4 Vae::decode_impl(const Tensor4& latents, Mode mode, Tape* tape) const {
    const std::size_t n = latents.shape().n;
    Tensor4 pre = dense(latents, dec_in_).reshaped({n, config_.widths[4], spatial_[5].rows, spatial_[5].cols});
    Tensor4 h = leaky_relu(pre, config_.leaky_slope);
    if (tape != nullptr) {
        tape->dec_pre = std::move(pre);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        Tensor4 t = transpose_conv2d(h, dec_tconv_[i]);
        BatchNormCache* cache = tape != nullptr ? &tape->dec_bn[i] : nullptr;
        Tensor4 b = batchnorm(t, dec_bn_[i], mode, cache);
        Tensor4 next = leaky_relu(b, config_.leaky_slope);
        if (tape != nullptr) {
            tape->dec_in[i] = std::move(h);
            tape->dec_bn_out[i] = std::move(b);
        }
        h = std::move(next);
    }
    Tensor4 out = sigmoid(transpose_conv2d(h, dec_tconv_[4]));
    if (tape != nullptr) {
        tape->dec_in[4] = std::move(h);
    }
    return out;
}

std::vector<LatentCode> Vae::encode(const Tensor4& images) const {
    check_input(images);
    const Tensor4 head = encode_head(images, Mode::Eval, nullptr);
    const std::size_t d = config_.latent_dim;
    std::vector<LatentCode> codes(images.shape().n);
    for (std::size_t n = 0; n < codes.size(); ++n) {
        auto row = head.item(n);
        codes[n].mu.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(d));
        codes[n].sigma.resize(d);
        for (std::size_t k = 0; k < d; ++k) {
            codes[n].sigma[k] = std::exp(0.5 * std::clamp(row[d + k], kLogVarMin, kLogVarMax));
        }
    }
    return codes;
}

Tensor4 Vae::decode(const Tensor4& latents) const {
    if (latents.shape().per_item() != config_.latent_dim || latents.shape().n == 0) {
        throw ShapeError(fmt::format("latent batch {} does not have {} values per item", latents.shape().str(),
                                     config_.latent_dim));
    }
    return decode_impl(latents.reshaped({latents.shape().n, config_.latent_dim, 1, 1}), Mode::Eval, nullptr);
}

Tensor4 Vae::decode(std::span<const double> z) const {
    if (z.size() != config_.latent_dim) {
        throw ShapeError(fmt::format("latent vector has length {}, model expects {}", z.size(), config_.latent_dim));
    }
    return decode(Tensor4({1, config_.latent_dim, 1, 1}, std::vector<double>(z.begin(), z.end())));
}

Tensor4 Vae::reconstruct(const Tensor4& images) const {
    check_input(images);
    const Tensor4 head = encode_head(images, Mode::Eval, nullptr);
    const std::size_t n = images.shape().n;
    const std::size_t d = config_.latent_dim;
    Tensor4 mu({n, d, 1, 1});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(head.item(i).begin(), d, mu.item(i).begin());
    }
    return decode_impl(mu, Mode::Eval, nullptr);
}

LossTerms Vae::run(const Tensor4& images, const Tensor4& noise, Mode mode, Tape* tape) const {
    check_input(images);
    const std::size_t n = images.shape().n;
    const std::size_t d = config_.latent_dim;
    if (noise.size() != n * d) {
        throw ShapeError(fmt::format("noise {} does not match batch {} x latent {}", noise.shape().str(), n, d));
    }
    Tensor4 head = encode_head(images, mode, tape);

    Tensor4 z({n, d, 1, 1});
    std::vector<double> sigma(n * d);
    std::vector<bool> clamped(n * d, false);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = head.item(i);
        for (std::size_t k = 0; k < d; ++k) {
            const double mu = row[k];
            double logvar = row[d + k];
            if (logvar < kLogVarMin || logvar > kLogVarMax) {
                clamped[i * d + k] = true;
                logvar = std::clamp(logvar, kLogVarMin, kLogVarMax);
            }
            const double s = std::exp(0.5 * logvar);
            sigma[i * d + k] = s;
            z[i * d + k] = mu + s * noise[i * d + k];
            kl += -0.5 * (logvar - s * s - mu * mu + 1.0);
        }
    }
    const Tensor4 out = decode_impl(z, mode, tape);

    double recon = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = out[i] - images[i];
        recon += 0.5 * diff * diff;
    }
    const auto batch = static_cast<double>(n);
    LossTerms terms{0.0, recon / batch, kl / batch};
    terms.total = terms.reconstruction + terms.kl;

    if (tape != nullptr) {
        tape->head = std::move(head);
        tape->noise = noise.reshaped({n, d, 1, 1});
        tape->sigma = std::move(sigma);
        tape->clamped = std::move(clamped);
        tape->z = std::move(z);
        tape->output = out;
    }
    return terms;
}

LossTerms Vae::elbo_loss(const Tensor4& images, Rng& rng, Mode mode) const {
    check_input(images);
    Tensor4 noise({images.shape().n, config_.latent_dim, 1, 1});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : noise.storage()) {
        v = dist(rng);
    }
    return run(images, noise, mode, nullptr);
}

LossTerms Vae::forward_backward(const Tensor4& images, const Tensor4& noise, Mode mode, Gradients* grads,
                                bool update_stats) {
    if (grads == nullptr && !update_stats) {
        return run(images, noise, mode, nullptr);
    }
    Tape tape;
    const LossTerms terms = run(images, noise, mode, &tape);
    if (update_stats && mode == Mode::Train) {
        for (std::size_t i = 0; i < 5; ++i) {
            update_running_stats(enc_bn_[i], tape.enc_bn[i]);
        }
        for (std::size_t i = 0; i < 4; ++i) {
            update_running_stats(dec_bn_[i], tape.dec_bn[i]);
        }
    }
    if (grads == nullptr) {
        return terms;
    }

    const std::size_t n = images.shape().n;
    const std::size_t d = config_.latent_dim;
    const auto batch = static_cast<double>(n);
    const double slope = config_.leaky_slope;

    // decoder
    Tensor4 g_out(tape.output.shape());
    for (std::size_t i = 0; i < g_out.size(); ++i) {
        g_out[i] = (tape.output[i] - images[i]) / batch;
    }
    std::array<LayerGrads, 5> g_tconv;
    std::array<LayerGrads, 4> g_dbn;
    g_tconv[4] = transpose_conv2d_backward(tape.dec_in[4], dec_tconv_[4], sigmoid_backward(tape.output, g_out));
    Tensor4 g_h = std::move(g_tconv[4].input);
    for (std::size_t r = 0; r < 4; ++r) {
        const std::size_t i = 3 - r;
        g_dbn[i] = batchnorm_backward(tape.dec_bn[i], dec_bn_[i], leaky_relu_backward(tape.dec_bn_out[i], slope, g_h));
        g_tconv[i] = transpose_conv2d_backward(tape.dec_in[i], dec_tconv_[i], g_dbn[i].input);
        g_h = std::move(g_tconv[i].input);
    }
    const Tensor4 g_pre = leaky_relu_backward(tape.dec_pre, slope, g_h);
    LayerGrads g_dec_in = dense_backward(tape.z, dec_in_, g_pre.reshaped({n, g_pre.shape().per_item(), 1, 1}));

    // reparameterization and KL
    Tensor4 g_head(tape.head.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t idx = i * d + k;
            const double gz = g_dec_in.input[idx];
            const double mu = tape.head[i * 2 * d + k];
            const double s = tape.sigma[idx];
            g_head[i * 2 * d + k] = gz + mu / batch;
            g_head[i * 2 * d + d + k] =
                tape.clamped[idx] ? 0.0 : gz * tape.noise[idx] * 0.5 * s + 0.5 * (s * s - 1.0) / batch;
        }
    }

    // encoder
    EncoderGrads enc = backprop_encoder(tape, g_head);

    // same order as buffers()
    std::vector<const std::vector<double>*> ordered;
    for (std::size_t i = 0; i < 5; ++i) {
        ordered.insert(ordered.end(),
                       {&enc.conv[i].weight, &enc.conv[i].bias, &enc.bn[i].weight, &enc.bn[i].bias});
    }
    ordered.insert(ordered.end(), {&enc.head.weight, &enc.head.bias, &g_dec_in.weight, &g_dec_in.bias});
    for (std::size_t i = 0; i < 5; ++i) {
        ordered.insert(ordered.end(), {&g_tconv[i].weight, &g_tconv[i].bias});
        if (i < 4) {
            ordered.insert(ordered.end(), {&g_dbn[i].weight, &g_dbn[i].bias});
        }
    }
    grads->resize(ordered.size());
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        auto& dst = (*grads)[i];
        dst.resize(ordered[i]->size());
        std::copy(ordered[i]->begin(), ordered[i]->end(), dst.begin());
    }
    return terms;
}

Vae::EncoderGrads Vae::backprop_encoder(const Tape& tape, const Tensor4& g_head) const {
    EncoderGrads g;
    g.head = dense_backward(tape.head_in, enc_head_, g_head);
    Tensor4 g_h = std::move(g.head.input);
    for (std::size_t r = 0; r < 5; ++r) {
        const std::size_t i = 4 - r;
        g.bn[i] = batchnorm_backward(tape.enc_bn[i], enc_bn_[i],
                                     leaky_relu_backward(tape.enc_pre[i], config_.leaky_slope, g_h));
        g.conv[i] = conv2d_backward(tape.enc_in[i], enc_conv_[i], g.bn[i].input);
        g_h = std::move(g.conv[i].input);
    }
    g.input = std::move(g_h);
    return g;
}

Tensor4 Vae::encoder_head(const Tensor4& images, Mode mode) const {
    check_input(images);
    return encode_head(images, mode, nullptr);
}

Tensor4 Vae::encoder_backward(const Tensor4& images, Mode mode, const Tensor4& grad_head, Gradients* grads) const {
    check_input(images);
    Tape tape;
    const Tensor4 head = encode_head(images, mode, &tape);
    if (grad_head.shape() != head.shape()) {
        throw ShapeError(fmt::format("head gradient {} does not match head {}", grad_head.shape().str(),
                                     head.shape().str()));
    }
    EncoderGrads g = backprop_encoder(tape, grad_head);
    if (grads != nullptr) {
        grads->clear();
        for (std::size_t i = 0; i < 5; ++i) {
            grads->insert(grads->end(), {g.conv[i].weight, g.conv[i].bias, g.bn[i].weight, g.bn[i].bias});
        }
        grads->insert(grads->end(), {g.head.weight, g.head.bias});
    }
    return std::move(g.input);
}

std::vector<NamedBuffer> Vae::buffers() {
    std::vector<NamedBuffer> out;
    auto add = [&out](const std::string& prefix, LayerParams& p) {
        const bool bn = p.kind == LayerKind::BatchNorm;
        out.push_back({prefix + (bn ? ".gamma" : ".weight"), p.weight, true});
        out.push_back({prefix + (bn ? ".beta" : ".bias"), p.bias, true});
    };
    for (std::size_t i = 0; i < 5; ++i) {
        add(fmt::format("encoder.conv{}", i), enc_conv_[i]);
        add(fmt::format("encoder.bn{}", i), enc_bn_[i]);
    }
    add("encoder.head", enc_head_);
    add("decoder.dense", dec_in_);
    for (std::size_t i = 0; i < 5; ++i) {
        add(fmt::format("decoder.tconv{}", i), dec_tconv_[i]);
        if (i < 4) {
            add(fmt::format("decoder.bn{}", i), dec_bn_[i]);
        }
    }
    auto stats = [&out](const std::string& prefix, LayerParams& p) {
        out.push_back({prefix + ".running_mean", p.running_mean, false});
        out.push_back({prefix + ".running_var", p.running_var, false});
    };
    for (std::size_t i = 0; i < 5; ++i) {
        stats(fmt::format("encoder.bn{}", i), enc_bn_[i]);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        stats(fmt::format("decoder.bn{}", i), dec_bn_[i]);
    }
    return out;
}

std::vector<NamedBuffer> Vae::buffers() const {
    // the spans are only read through the const overload's callers
    return const_cast<Vae*>(this)->buffers();
}

std::size_t Vae::trainable_count() const {
    const auto all = buffers();
    return static_cast<std::size_t>(
        std::count_if(all.begin(), all.end(), [](const NamedBuffer& b) { return b.trainable; }));
}

Fragment elbo_fragment(const Vae& model, const Tensor4& images, const Tensor4& noise,
                       std::span<const std::size_t> buffer_indices) {
    std::vector<std::size_t> indices(buffer_indices.begin(), buffer_indices.end());
    Fragment f;
    {
        const auto bufs = model.buffers();
        for (std::size_t b : indices) {
            if (b >= bufs.size() || !bufs[b].trainable) {
                throw std::invalid_argument(fmt::format("buffer index {} is not a trainable parameter", b));
            }
            f.point.insert(f.point.end(), bufs[b].values.begin(), bufs[b].values.end());
        }
    }
    auto load = [model, indices](std::span<const double> flat) {
        Vae m = model;
        auto bufs = m.buffers();
        std::size_t off = 0;
        for (std::size_t b : indices) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), bufs[b].values.size(),
                        bufs[b].values.begin());
            off += bufs[b].values.size();
        }
        return m;
    };
    f.loss = [=](std::span<const double> flat) {
        Vae m = load(flat);
        return m.forward_backward(images, noise, Mode::Train, nullptr).total;
    };
    f.gradient = [=](std::span<const double> flat) {
        Vae m = load(flat);
        Gradients g;
        m.forward_backward(images, noise, Mode::Train, &g);
        std::vector<double> out;
        for (std::size_t b : indices) {
            out.insert(out.end(), g[b].begin(), g[b].end());
        }
        return out;
    };
    return f;
}

Fragment encoder_fragment(const Vae& model, const Tensor4& images, std::uint64_t seed) {
    const std::size_t encoder_buffers = Vae::kEncoderTrainable;
    const std::size_t n = images.shape().n;
    const std::size_t d = model.config().latent_dim;
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor4 projection({n, 2 * d, 1, 1});
    for (double& v : projection.storage()) {
        v = dist(rng);
    }

    Fragment f;
    f.point = images.storage();
    {
        const auto bufs = model.buffers();
        for (std::size_t b = 0; b < encoder_buffers; ++b) {
            f.point.insert(f.point.end(), bufs[b].values.begin(), bufs[b].values.end());
        }
    }
    const Shape4 shape = images.shape();
    auto load = [model, shape, encoder_buffers](std::span<const double> flat, Tensor4& x) {
        Vae m = model;
        x = Tensor4(shape,
                    std::vector<double>(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(shape.count())));
        auto bufs = m.buffers();
        std::size_t off = shape.count();
        for (std::size_t b = 0; b < encoder_buffers; ++b) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), bufs[b].values.size(),
                        bufs[b].values.begin());
            off += bufs[b].values.size();
        }
        return m;
    };
    f.loss = [=](std::span<const double> flat) {
        Tensor4 x;
        const Vae m = load(flat, x);
        return dot(m.encoder_head(x, Mode::Train).data(), projection.data());
    };
    f.gradient = [=](std::span<const double> flat) {
        Tensor4 x;
        const Vae m = load(flat, x);
        Gradients g;
        const Tensor4 gx = m.encoder_backward(x, Mode::Train, projection, &g);
        std::vector<double> out = gx.storage();
        for (const auto& v : g) {
            out.insert(out.end(), v.begin(), v.end());
        }
        return out;
    };
    return f;
}

void flip_horizontal(std::span<double> image, std::size_t channels, std::size_t height, std::size_t width) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t r = 0; r < height; ++r) {
            auto row = image.subspan((c * height + r) * width, width);
            std::reverse(row.begin(), row.end());
        }
    }
}

void flip_vertical(std::span<double> image, std::size_t channels, std::size_t height, std::size_t width) {
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t r = 0; r < height / 2; ++r) {
            auto top = image.subspan((c * height + r) * width, width);
            auto bottom = image.subspan((c * height + height - 1 - r) * width, width);
            std::swap_ranges(top.begin(), top.end(), bottom.begin());
        }
    }
}

}  // namespace seavae

namespace seavae {

namespace {

Tensor4 gather_batch(const Tensor4& data, std::span<const std::size_t> order, Rng* flip_rng) {
    const auto& s = data.shape();
    Tensor4 batch({order.size(), s.c, s.h, s.w});
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto dst = batch.item(i);
        const auto src = data.item(order[i]);
        std::copy(src.begin(), src.end(), dst.begin());
        if (flip_rng != nullptr) {
            const bool h = coin(*flip_rng);
            const bool v = coin(*flip_rng);
            if (h) {
                flip_horizontal(dst, s.c, s.h, s.w);
            }
            if (v) {
                flip_vertical(dst, s.c, s.h, s.w);
            }
        }
    }
    return batch;
}

Tensor4 normal_noise(std::size_t n, std::size_t d, Rng& rng) {
    Tensor4 noise({n, d, 1, 1});
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : noise.storage()) {
        v = dist(rng);
    }
    return noise;
}

LossTerms evaluate(Vae& model, const Tensor4& data, std::size_t batch_size, std::uint64_t seed) {
    Rng rng(seed);
    LossTerms sum;
    const std::size_t n = data.shape().n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < n; begin += batch_size) {
        const std::size_t end = std::min(n, begin + batch_size);
        const Tensor4 batch = gather_batch(data, std::span(order).subspan(begin, end - begin), nullptr);
        const Tensor4 noise = normal_noise(end - begin, model.config().latent_dim, rng);
        const LossTerms t = model.forward_backward(batch, noise, Mode::Eval, nullptr);
        const auto w = static_cast<double>(end - begin);
        sum.total += t.total * w;
        sum.reconstruction += t.reconstruction * w;
        sum.kl += t.kl * w;
    }
    const auto count = static_cast<double>(n);
    return {sum.total / count, sum.reconstruction / count, sum.kl / count};
}

}  // namespace

Checkpoint train(const Tensor4& train_images, const Tensor4& val_images, const VaeConfig& config,
                 const TrainCallbacks& callbacks) {
    config.validate();
    if (train_images.shape().n < 2) {
        throw std::invalid_argument("training set needs at least 2 images");
    }
    if (val_images.shape().n == 0) {
        throw std::invalid_argument("validation set is empty");
    }
    if (train_images.shape().c != config.channels || train_images.shape().h != config.height ||
        train_images.shape().w != config.width) {
        throw ShapeError(fmt::format("training images {} do not match configured input {}x{}x{}",
                                     train_images.shape().str(), config.channels, config.height, config.width));
    }
    Vae model(config);

    Gradients grads;
    std::vector<ParamSlot> slots;
    {
        // size the gradient buffers once so the slot spans stay valid
        auto bufs = model.buffers();
        for (const auto& b : bufs) {
            if (b.trainable) {
                grads.emplace_back(b.values.size(), 0.0);
            }
        }
        std::size_t g = 0;
        for (const auto& b : bufs) {
            if (b.trainable) {
                slots.push_back({b.name, b.values, grads[g]});
                ++g;
            }
        }
    }
    AdamState adam = make_adam_state(slots, {.learning_rate = config.learning_rate, .single_precision_storage = true});
    // initial weights are stored in single precision too
    for (auto& slot : slots) {
        for (double& v : slot.value) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
    // running statistics are kept in double during training; the kept copy
    // matches what a checkpoint stores
    const auto snapshot = [](const Vae& m) {
        Vae copy = m;
        for (auto& b : copy.buffers()) {
            if (!b.trainable) {
                for (double& v : b.values) {
                    v = static_cast<double>(static_cast<float>(v));
                }
            }
        }
        return copy;
    };
    Vae best = snapshot(model);

    Rng rng(config.seed ^ 0x5eedULL);
    const std::uint64_t val_seed = config.seed ^ 0xa11da7eULL;
    const std::size_t n = train_images.shape().n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainingHistory history;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        LossTerms sum;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
            const std::size_t end = std::min(n, begin + config.batch_size);
            if (end - begin < 2) {
                break;  // batchnorm needs two items
            }
            const Tensor4 batch = gather_batch(train_images, std::span(order).subspan(begin, end - begin), &rng);
            const Tensor4 noise = normal_noise(end - begin, config.latent_dim, rng);
            const LossTerms t = model.forward_backward(batch, noise, Mode::Train, &grads, true);
            adam_step(slots, adam);
            const auto w = static_cast<double>(end - begin);
            sum.total += t.total * w;
            sum.reconstruction += t.reconstruction * w;
            sum.kl += t.kl * w;
            seen += end - begin;
        }
        const LossTerms val = evaluate(model, val_images, config.batch_size, val_seed);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = sum.total / static_cast<double>(seen);
        rec.train_reconstruction = sum.reconstruction / static_cast<double>(seen);
        rec.train_kl = sum.kl / static_cast<double>(seen);
        rec.val_loss = val.total;
        rec.val_reconstruction = val.reconstruction;
        rec.val_kl = val.kl;
        history.epochs.push_back(rec);
        if (callbacks.on_epoch) {
            callbacks.on_epoch(rec);
        }
        if (!std::isfinite(val.total)) {
            throw std::runtime_error(fmt::format("validation loss became non-finite at epoch {}", epoch));
        }
        if (val.total < best_val) {
            best_val = val.total;
            best = snapshot(model);
            history.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > config.patience) {
            history.early_stopped = true;
            break;
        }
    }
    return Checkpoint{std::move(best), std::move(history)};
}

}  // namespace seavae
