#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "seavae/checkpoint.hpp"
#include "seavae/gradcheck.hpp"
#include "seavae/vae.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace seavae;
using seavae::oracle::kl_monte_carlo;
using seavae::testing::random_tensor;
using seavae::testing::smooth_images;

namespace {

VaeConfig small_config(std::size_t latent = 3) {
    VaeConfig c;
    c.latent_dim = latent;
    c.channels = 3;
    c.height = 32;
    c.width = 32;
    c.widths = {4, 4, 6, 6, 8};
    c.batch_size = 16;
    c.seed = 11;
    return c;
}

Tensor4 uniform_images(Shape4 shape, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor4 t(shape);
    for (double& v : t.storage()) {
        v = u(rng);
    }
    return t;
}

NamedBuffer find_buffer(Vae& model, const std::string& name) {
    for (auto& b : model.buffers()) {
        if (b.name == name) {
            return b;
        }
    }
    FAIL("no buffer named " << name);
    return {};
}


}  // namespace

TEST_CASE("default architecture maps 64x80 through 2x3 and back") {
    Vae model(VaeConfig{});
    const Tensor4 x = uniform_images(model.input_shape(2), 1);
    const auto codes = model.encode(x);
    REQUIRE(codes.size() == 2);
    CHECK(codes[0].mu.size() == 64);
    CHECK(codes[0].sigma.size() == 64);
    const Tensor4 y = model.reconstruct(x);
    CHECK(y.shape() == x.shape());
    CHECK(y.all_finite());
}

TEST_CASE("odd input sizes reconstruct to the same shape") {
    VaeConfig c = small_config();
    c.height = 33;
    c.width = 47;
    Vae model(c);
    const Tensor4 x = uniform_images(model.input_shape(1), 2);
    CHECK(model.reconstruct(x).shape() == x.shape());
}

TEST_CASE("config validation") {
    VaeConfig c = small_config();
    c.latent_dim = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.height = 31;
    CHECK_THROWS_AS(Vae{c}, std::invalid_argument);
    c = small_config();
    c.widths[2] = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("config json round trip") {
    VaeConfig c = small_config(7);
    c.learning_rate = 5e-4;
    const nlohmann::json j = c;
    const auto back = j.get<VaeConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(back.widths == c.widths);
}

TEST_CASE("encode contract: shapes, positivity, determinism") {
    Vae model(small_config(5));
    const Tensor4 x = uniform_images(model.input_shape(3), 3);
    const auto a = model.encode(x);
    const auto b = model.encode(x);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].mu.size() == 5);
        CHECK(a[i].z.empty());
        CHECK(a[i].mu == b[i].mu);
        CHECK(a[i].sigma == b[i].sigma);
        for (double s : a[i].sigma) {
            CHECK(s > 0.0);
        }
    }
}

TEST_CASE("batch encoding equals per-item encoding in eval mode") {
    Vae model(small_config(4));
    // give the running statistics non-trivial values
    {
        Gradients g;
        const Tensor4 warm = uniform_images(model.input_shape(8), 4);
        const Tensor4 noise = random_tensor({8, 4, 1, 1}, 5);
        model.forward_backward(warm, noise, Mode::Train, &g, true);
    }
    const Tensor4 x = uniform_images(model.input_shape(6), 6);
    const auto batch = model.encode(x);
    for (std::size_t i = 0; i < 6; ++i) {
        const auto single = model.encode(x.slice(i, i + 1));
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(std::abs(batch[i].mu[k] - single[0].mu[k]) < 1e-5);
            CHECK(std::abs(batch[i].sigma[k] - single[0].sigma[k]) < 1e-5);
        }
    }
}

TEST_CASE("shape mismatches are rejected") {
    Vae model(small_config(3));
    CHECK_THROWS_AS((void)model.encode(Tensor4({1, 3, 32, 31})), ShapeError);
    CHECK_THROWS_AS((void)model.encode(Tensor4({1, 1, 32, 32})), ShapeError);
    const std::vector<double> z(4, 0.0);
    CHECK_THROWS_AS((void)model.decode(z), ShapeError);
}

TEST_CASE("decode: zero latent finite, identical latents identical outputs") {
    Vae model(small_config(3));
    const std::vector<double> z(3, 0.0);
    const Tensor4 a = model.decode(z);
    const Tensor4 b = model.decode(z);
    CHECK(a.shape() == model.input_shape(1));
    CHECK(a.all_finite());
    CHECK(a.storage() == b.storage());
    for (double v : a.storage()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("sample_latent") {
    Rng rng(1);
    LatentCode tight{{0.5, -2.0}, {1e-12, 1e-12}, {}};
    const auto z = sample_latent(tight, rng);
    CHECK(z[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(z[1] == doctest::Approx(-2.0).epsilon(1e-9));

    LatentCode code{{0.1, 0.2, 0.3}, {1.0, 2.0, 0.5}, {}};
    Rng r1(9), r2(9);
    CHECK(sample_latent(code, r1) == sample_latent(code, r2));

    // law of large numbers with mu = 0, sigma = 1
    const std::size_t d = 4;
    const std::size_t n = 100000;
    LatentCode unit{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), {}};
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    Rng rng2(2024);
    for (std::size_t s = 0; s < n; ++s) {
        const auto x = sample_latent(unit, rng2);
        for (std::size_t k = 0; k < d; ++k) {
            sum[k] += x[k];
            sq[k] += x[k] * x[k];
        }
    }
    for (std::size_t k = 0; k < d; ++k) {
        const double mean = sum[k] / n;
        const double sd = std::sqrt(sq[k] / n - mean * mean);
        CHECK(std::abs(mean) < 0.02);
        CHECK(std::abs(sd - 1.0) < 0.02);
    }
}

TEST_CASE("kl closed form: analytic points and rejection") {
    CHECK(kl_closed_form(std::vector<double>(5, 0.0), std::vector<double>(5, 1.0)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(kl_closed_form(std::vector<double>{1.0}, std::vector<double>{1.0}) - 0.5) < 1e-9);
    CHECK(std::abs(kl_closed_form(std::vector<double>(3, 1.0), std::vector<double>(3, 1.0)) - 1.5) < 1e-9);
    CHECK_THROWS_AS(kl_closed_form(std::vector<double>{0.0}, std::vector<double>{0.0}), std::invalid_argument);
    CHECK_THROWS_AS(kl_closed_form(std::vector<double>{0.0}, std::vector<double>{-1.0}), std::invalid_argument);
    CHECK_THROWS_AS(kl_closed_form(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("kl closed form is non-negative and zero only at the prior") {
    Rng rng(77);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> s(0.05, 4.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> mu(3), sigma(3);
        for (std::size_t k = 0; k < 3; ++k) {
            mu[k] = n01(rng);
            sigma[k] = s(rng);
        }
        CHECK(kl_closed_form(mu, sigma) > 0.0);
    }
}

TEST_CASE("kl closed form matches Monte-Carlo estimate") {
    Rng rng(123);
    std::uniform_real_distribution<double> m(-1.5, 1.5);
    std::uniform_real_distribution<double> s(0.3, 2.0);
    for (int pair = 0; pair < 20; ++pair) {
        std::vector<double> mu(4), sigma(4);
        for (std::size_t k = 0; k < 4; ++k) {
            mu[k] = m(rng);
            sigma[k] = s(rng);
        }
        const double exact = kl_closed_form(mu, sigma);
        const double mc = kl_monte_carlo(mu, sigma, 1000000, 1000 + static_cast<std::uint64_t>(pair));
        CHECK(std::abs(mc - exact) / exact < 0.01);
    }
}

TEST_CASE("perfect reconstruction at the prior gives zero loss") {
    Vae model(small_config(3));
    for (auto& b : model.buffers()) {
        if (b.name == "encoder.head.weight" || b.name == "encoder.head.bias" || b.name == "decoder.tconv4.weight") {
            std::fill(b.values.begin(), b.values.end(), 0.0);
        }
    }
    auto bias = find_buffer(model, "decoder.tconv4.bias");
    const double levels[3] = {-0.4, 0.1, 1.3};
    std::copy(levels, levels + 3, bias.values.begin());
    Tensor4 x(model.input_shape(4));
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t r = 0; r < 32; ++r)
                for (std::size_t q = 0; q < 32; ++q) {
                    x.at(n, c, r, q) = 1.0 / (1.0 + std::exp(-levels[c]));
                }
    Rng rng(3);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        const LossTerms t = model.elbo_loss(x, rng, mode);
        CHECK(t.kl == 0.0);
        CHECK(t.reconstruction < 1e-24);
        CHECK(t.total < 1e-24);
    }
}

TEST_CASE("elbo terms: total is the sum, kl term matches encoder codes") {
    Vae model(small_config(4));
    const Tensor4 x = uniform_images(model.input_shape(5), 8);
    Rng rng(4);
    const LossTerms t = model.elbo_loss(x, rng, Mode::Eval);
    CHECK(t.total == doctest::Approx(t.reconstruction + t.kl).epsilon(1e-12));
    double kl = 0.0;
    for (const auto& code : model.encode(x)) {
        kl += kl_closed_form(code.mu, code.sigma);
    }
    CHECK(std::abs(t.kl - kl / 5.0) < 1e-9 * std::max(1.0, kl));
    CHECK(t.reconstruction > 0.0);
}

TEST_CASE("gradients cover every trainable buffer with matching sizes") {
    Vae model(small_config(3));
    const Tensor4 x = uniform_images(model.input_shape(4), 9);
    const Tensor4 noise = random_tensor({4, 3, 1, 1}, 10);
    Gradients g;
    model.forward_backward(x, noise, Mode::Train, &g);
    const auto bufs = model.buffers();
    REQUIRE(g.size() == model.trainable_count());
    std::size_t t = 0;
    for (const auto& b : bufs) {
        if (b.trainable) {
            CHECK(g[t].size() == b.values.size());
            ++t;
        } else {
            CHECK(b.name.find("running_") != std::string::npos);
        }
    }
    // trainable buffers come first
    for (std::size_t i = 0; i < model.trainable_count(); ++i) {
        CHECK(bufs[i].trainable);
    }
    CHECK(bufs[Vae::kEncoderTrainable - 1].name == "encoder.head.bias");
}

TEST_CASE("negative ELBO gradient matches finite differences") {
    Vae model(small_config(3));
    const Tensor4 x = uniform_images(model.input_shape(4), 12);
    const Tensor4 noise = random_tensor({4, 3, 1, 1}, 13);
    std::vector<std::size_t> all(model.trainable_count());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Fragment f = elbo_fragment(model, x, noise, all);
    const auto report = grad_check(f, {.step = 1e-4, .coordinates = 300, .tolerance = 1e-3, .seed = 5, .floor = 1e-5});
    INFO("worst coord " << report.worst_coordinate << " analytic " << report.analytic_at_worst << " numeric "
                        << report.numeric_at_worst);
    CHECK(report.coordinates_checked == 300);
    CHECK(report.max_relative_error < 1e-3);
}

TEST_CASE("full encoder stack gradient matches finite differences") {
    Vae model(small_config(3));
    const Tensor4 x = uniform_images(model.input_shape(3), 14);
    const Fragment f = encoder_fragment(model, x, 15);
    const auto report = grad_check(f, {.step = 1e-5, .coordinates = 300, .tolerance = 1e-3, .seed = 6, .floor = 1e-6});
    INFO("worst coord " << report.worst_coordinate << " analytic " << report.analytic_at_worst << " numeric "
                        << report.numeric_at_worst);
    CHECK(report.max_relative_error < 1e-3);
}

TEST_CASE("flips are involutions and move pixels as expected") {
    std::vector<double> img(2 * 3 * 4);
    std::iota(img.begin(), img.end(), 0.0);
    const auto orig = img;
    flip_horizontal(img, 2, 3, 4);
    CHECK(img[0] == 3.0);
    CHECK(img[3] == 0.0);
    CHECK(img[12] == 15.0);
    flip_horizontal(img, 2, 3, 4);
    CHECK(img == orig);
    flip_vertical(img, 2, 3, 4);
    CHECK(img[0] == 8.0);
    CHECK(img[8] == 0.0);
    flip_vertical(img, 2, 3, 4);
    CHECK(img == orig);
}

TEST_CASE("train rejects degenerate datasets") {
    const VaeConfig c = small_config();
    const Tensor4 one = smooth_images(1, 3, 32, 32, 1);
    const Tensor4 some = smooth_images(4, 3, 32, 32, 2);
    CHECK_THROWS_AS(train(one, some, c), std::invalid_argument);
    CHECK_THROWS_AS(train(some, Tensor4({0, 3, 32, 32}), c), std::invalid_argument);
    CHECK_THROWS_AS(train(smooth_images(4, 3, 33, 32, 2), some, c), ShapeError);
}

TEST_CASE("constant images are reconstructed almost exactly") {
    VaeConfig c = small_config(2);
    c.max_epochs = 20;
    c.batch_size = 8;
    c.patience = 20;
    Tensor4 data({240, 3, 32, 32});
    std::fill(data.storage().begin(), data.storage().end(), 0.35);
    const Checkpoint ckpt = train(data.slice(0, 200), data.slice(200, 240), c);
    const Tensor4 rec = ckpt.model.reconstruct(data.slice(0, 4));
    double mse = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        const double d = rec.storage()[i] - 0.35;
        mse += d * d;
    }
    mse /= static_cast<double>(rec.size());
    CHECK(mse < 1e-3);
    const auto& h = ckpt.history.epochs;
    // reconstruction term per pixel, 1/2 squared error
    CHECK(h.back().val_reconstruction / static_cast<double>(3 * 32 * 32) < 1e-3);
}

TEST_CASE("training loss decreases over the first epochs and runs are reproducible") {
    VaeConfig c = small_config(8);
    c.max_epochs = 5;
    c.patience = 10;
    const Tensor4 data = smooth_images(200, 3, 32, 32, 21);
    const Checkpoint a = train(data.slice(0, 140), data.slice(140, 200), c);
    REQUIRE(a.history.epochs.size() == 5);
    for (std::size_t e = 1; e < 5; ++e) {
        CHECK(a.history.epochs[e].train_loss < a.history.epochs[e - 1].train_loss);
    }
    const Checkpoint b = train(data.slice(0, 140), data.slice(140, 200), c);
    CHECK(checkpoint_id(a) == checkpoint_id(b));
}

TEST_CASE("early stopping returns the best validation epoch") {
    VaeConfig c = small_config(4);
    c.max_epochs = 60;
    c.patience = 1;
    c.learning_rate = 3e-2;  // noisy enough to stall quickly
    const Tensor4 data = smooth_images(24, 3, 32, 32, 31);
    std::vector<std::size_t> epochs_seen;
    TrainCallbacks cb{[&](const EpochRecord& r) { epochs_seen.push_back(r.epoch); }};
    const Checkpoint ckpt = train(data.slice(0, 16), data.slice(16, 24), c, cb);
    const auto& h = ckpt.history.epochs;
    CHECK(epochs_seen.size() == h.size());
    double best = h.front().val_loss;
    for (const auto& r : h) {
        best = std::min(best, r.val_loss);
    }
    REQUIRE(ckpt.history.best_epoch >= 1);
    CHECK(h[ckpt.history.best_epoch - 1].val_loss == best);
    REQUIRE(ckpt.history.early_stopped);
    // stopped after more than `patience` epochs without improvement
    CHECK(h.size() == ckpt.history.best_epoch + c.patience + 1);
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
    VaeConfig c = small_config(3);
    c.max_epochs = 2;
    const Tensor4 data = smooth_images(24, 3, 32, 32, 41);
    const Checkpoint ckpt = train(data.slice(0, 16), data.slice(16, 24), c);
    const auto dir = std::filesystem::temp_directory_path() / "seavae_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto p1 = dir / "a.vaeckpt";
    const auto p2 = dir / "b.vaeckpt";
    save_checkpoint(ckpt, p1);
    const Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const auto b1 = slurp(p1);
    CHECK(b1 == slurp(p2));
    CHECK(std::string(b1.begin(), b1.begin() + 4) == "VAEC");
    CHECK(loaded.history.epochs.size() == ckpt.history.epochs.size());
    CHECK(loaded.history.best_epoch == ckpt.history.best_epoch);
    CHECK(checkpoint_id(loaded) == checkpoint_id(ckpt));

    // loaded weights give the same reconstructions up to float32 storage
    const Tensor4 x = data.slice(0, 2);
    const Tensor4 r1 = ckpt.model.reconstruct(x);
    const Tensor4 r2 = loaded.model.reconstruct(x);
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(std::abs(r1.storage()[i] - r2.storage()[i]) < 1e-4);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const Checkpoint ckpt{Vae(small_config(2)), {}};
    auto bytes = serialize_checkpoint(ckpt);
    CHECK_NOTHROW(deserialize_checkpoint(bytes));
    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), CheckpointError);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(magic), CheckpointError);
    auto truncated = bytes;
    truncated.resize(10);
    CHECK_THROWS_AS(deserialize_checkpoint(truncated), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.vaeckpt"), CheckpointError);
}

TEST_CASE("crc32 matches the standard check value") {
    const std::string s = "123456789";
    CHECK(crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0xCBF43926u);
}
