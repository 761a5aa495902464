#include "seavae/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "seavae/image_io.hpp"
#include "seavae/layers.hpp"

namespace seavae {

namespace {

constexpr double kPi = std::numbers::pi;

// Smooth lattice noise: random values on a grid with smoothstep interpolation.
class ValueNoise {
public:
    ValueNoise(std::size_t height, std::size_t width, double cell, Rng& rng)
        : cell_(cell),
          rows_(static_cast<std::size_t>(std::ceil(static_cast<double>(height) / cell)) + 2),
          cols_(static_cast<std::size_t>(std::ceil(static_cast<double>(width) / cell)) + 2),
          grid_(rows_ * cols_) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (double& v : grid_) {
            v = u(rng);
        }
        std::uniform_real_distribution<double> off(0.0, cell);
        dy_ = off(rng);
        dx_ = off(rng);
    }

    /// Any coordinate is valid; the lattice wraps around.
    [[nodiscard]] double at(double y, double x) const {
        const double gy = (y + dy_) / cell_;
        const double gx = (x + dx_) / cell_;
        const double fy = std::floor(gy);
        const double fx = std::floor(gx);
        const double ty = smooth(gy - fy);
        const double tx = smooth(gx - fx);
        const std::size_t r0 = wrap(fy, rows_);
        const std::size_t c0 = wrap(fx, cols_);
        const std::size_t r1 = (r0 + 1) % rows_;
        const std::size_t c1 = (c0 + 1) % cols_;
        const double a = grid_[r0 * cols_ + c0];
        const double b = grid_[r0 * cols_ + c1];
        const double c = grid_[r1 * cols_ + c0];
        const double d = grid_[r1 * cols_ + c1];
        return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }

private:
    static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
    static std::size_t wrap(double v, std::size_t n) {
        const auto m = static_cast<long long>(n);
        return static_cast<std::size_t>(((static_cast<long long>(v) % m) + m) % m);
    }
    double cell_;
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> grid_;
    double dy_ = 0.0;
    double dx_ = 0.0;
};

// Sum of octaves with halving cell size and amplitude.
class Fractal {
public:
    Fractal(std::size_t height, std::size_t width, double base_cell, std::size_t octaves, Rng& rng) {
        double cell = base_cell;
        for (std::size_t o = 0; o < octaves && cell >= 1.0; ++o) {
            layers_.emplace_back(height, width, cell, rng);
            cell /= 2.0;
        }
    }
    [[nodiscard]] double at(double y, double x) const {
        double s = 0.0;
        double amp = 1.0;
        double norm = 0.0;
        for (const auto& l : layers_) {
            s += amp * l.at(y, x);
            norm += amp;
            amp *= 0.5;
        }
        return s / norm;
    }

private:
    std::vector<ValueNoise> layers_;
};

using Rgb = std::array<double, 3>;

Rgb jitter(Rgb base, double amount, Rng& rng) {
    std::uniform_real_distribution<double> u(-amount, amount);
    for (double& v : base) {
        v = std::clamp(v + u(rng), 0.0, 1.0);
    }
    return base;
}

struct Quad {
    std::array<double, 4> y;
    std::array<double, 4> x;

    [[nodiscard]] bool contains(double py, double px) const {
        // convex, corners in order: all edge cross products share a sign
        int sign = 0;
        for (int i = 0; i < 4; ++i) {
            const int j = (i + 1) % 4;
            const double cr = (x[j] - x[i]) * (py - y[i]) - (y[j] - y[i]) * (px - x[i]);
            const int s = cr > 0 ? 1 : (cr < 0 ? -1 : 0);
            if (s == 0) continue;
            if (sign == 0) sign = s;
            if (s != sign) return false;
        }
        return true;
    }
};

}  // namespace

CameraGeometry survey_geometry() {
    CameraGeometry g;
    g.fov_h_deg = 2.0 * std::atan((2.0 / 3.0) / 2.0) * 180.0 / kPi;
    g.fov_v_deg = 2.0 * std::atan((8.0 / 15.0) / 2.0) * 180.0 / kPi;
    g.altitude_m = 2.0;
    g.width_px = 80;
    g.height_px = 64;
    return g;
}

SynthImage render_synthetic(const SynthConfig& config, std::uint64_t seed, std::size_t index, bool outlier) {
    const std::size_t h = config.height;
    const std::size_t w = config.width;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5ea7u};
    Rng rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    // three substrate proxies mixed by a low-frequency field
    const double v = config.variability;
    const Rgb sand = jitter({0.62, 0.60, 0.50}, 0.06 * v, rng);
    const Rgb kelp = jitter({0.22, 0.32, 0.20}, 0.05 * v, rng);
    const Rgb rock = jitter({0.36, 0.38, 0.42}, 0.06 * v, rng);
    const Fractal mix_a(h, w, 48.0, 2, rng);
    const Fractal mix_b(h, w, 40.0, 2, rng);
    const Fractal grain(h, w, 8.0, 3, rng);
    const Fractal rocks(h, w, 16.0, 3, rng);
    const Fractal streak(h, w, 12.0, 3, rng);
    // each frame is dominated by one habitat: sand (a high, b low), kelp (a low, b high) or rock (both high)
    static constexpr double kRegimeBias[3][2] = {{1.0, -1.0}, {-1.0, 1.0}, {1.0, 1.0}};
    const auto regime = static_cast<std::size_t>(u(rng) * 3.0) % 3;
    const double bias_a = kRegimeBias[regime][0] + 0.4 * v * (u(rng) - 0.5);
    const double bias_b = kRegimeBias[regime][1] + 0.4 * v * (u(rng) - 0.5);
    const double ripple_theta = u(rng) * kPi;
    const double ripple_len = 6.0 + 8.0 * u(rng);
    const double ripple_phase = u(rng) * 2.0 * kPi;
    const double kelp_theta = u(rng) * kPi;
    const double kelp_stretch = 3.0 + 2.0 * u(rng);
    // vignetting-like illumination falloff, as from a strobe at 2 m
    const double light_y = (0.5 + 0.4 * v * (u(rng) - 0.5)) * static_cast<double>(h);
    const double light_x = (0.5 + 0.4 * v * (u(rng) - 0.5)) * static_cast<double>(w);
    const double falloff = 0.35 + 0.2 * v * (u(rng) - 0.5);
    const Rgb cast = jitter({0.0, 0.03, 0.06}, 0.03 * v, rng);
    // gravel and shell hash: detail too fine to reconstruct, with a per-image
    // amplitude spanning smooth sand to coarse rubble
    const Fractal gravel(h, w, 2.0, 2, rng);
    const double gravel_amp =
        std::exp(std::log(config.gravel_min) + u(rng) * (std::log(config.gravel_max) - std::log(config.gravel_min)));
    // sensor and backscatter noise; sqrt of a uniform draw spreads the noise variance evenly
    const double noise_sd = config.noise_max * std::sqrt(u(rng));
    const std::uint64_t noise_seed = rng();

    Tensor4 img({1, 3, h, w});
    const double diag = std::hypot(static_cast<double>(h), static_cast<double>(w));
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const double y = static_cast<double>(r);
            const double x = static_cast<double>(c);
            // soft weights for the three substrates
            const double wa = 1.0 / (1.0 + std::exp(-6.0 * (mix_a.at(y, x) + bias_a)));
            const double wb = 1.0 / (1.0 + std::exp(-6.0 * (mix_b.at(y, x) + bias_b)));
            const double w_sand = wa * (1.0 - wb);
            const double w_kelp = (1.0 - wa) * wb;
            const double w_rock = 1.0 - w_sand - w_kelp;

            const double ripple =
                std::sin(2.0 * kPi * (x * std::cos(ripple_theta) + y * std::sin(ripple_theta)) / ripple_len +
                         ripple_phase + 3.0 * grain.at(y, x));
            const double sand_v = 0.07 * ripple + 0.08 * grain.at(y, x);
            // kelp: noise sampled along a stretched axis gives elongated fronds
            const double ky = x * std::sin(kelp_theta) + y * std::cos(kelp_theta);
            const double kx = x * std::cos(kelp_theta) - y * std::sin(kelp_theta);
            const double kelp_v = 0.16 * streak.at(ky / kelp_stretch + 40.0, kx + 40.0);
            const double rv = rocks.at(y, x);
            const double rock_v = 0.18 * std::tanh(4.0 * rv) + 0.05 * grain.at(x + 17.0, y + 5.0);

            const double gravel_v = gravel_amp * std::tanh(3.0 * gravel.at(y, x));
            const double dist = std::hypot(y - light_y, x - light_x) / diag;
            const double light = 1.0 - falloff * dist * dist * 2.0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double base = w_sand * (sand[ch] + sand_v) + w_kelp * (kelp[ch] + kelp_v) +
                                    w_rock * (rock[ch] + rock_v) + gravel_v;
                img.at(0, ch, r, c) = std::clamp(base * light + cast[ch], 0.0, 1.0);
            }
        }
    }

    SynthImage out{std::move(img), std::nullopt};
    if (outlier) {
        const double ppm = ground_footprint(config.geometry).pixels_per_metre;
        const double side = config.object_side_m * ppm * (1.0 + config.object_jitter * (2.0 * u(rng) - 1.0));
        const double half = side / 2.0;
        const double margin = half * 1.5 + 2.0;
        const double cy = margin + u(rng) * (static_cast<double>(h) - 2.0 * margin);
        const double cx = margin + u(rng) * (static_cast<double>(w) - 2.0 * margin);
        const double theta = u(rng) * kPi / 2.0;
        Quad q{};
        const double corner_y[4] = {-1, -1, 1, 1};
        const double corner_x[4] = {-1, 1, 1, -1};
        for (int i = 0; i < 4; ++i) {
            // perturb corners to get a general quadrilateral
            const double py = corner_y[i] * half * (1.0 + 0.15 * (2.0 * u(rng) - 1.0));
            const double px = corner_x[i] * half * (1.0 + 0.15 * (2.0 * u(rng) - 1.0));
            q.y[i] = cy + py * std::cos(theta) + px * std::sin(theta);
            q.x[i] = cx - py * std::sin(theta) + px * std::cos(theta);
        }
        // paint colour: the palette entry furthest from the mean background under the quad
        static const Rgb palette[] = {{0.97, 0.95, 0.90}, {0.98, 0.85, 0.15}, {0.95, 0.45, 0.10}, {0.05, 0.05, 0.06}};
        Rgb under{0.0, 0.0, 0.0};
        double under_n = 0.0;
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                if (!q.contains(static_cast<double>(r) + 0.5, static_cast<double>(c) + 0.5)) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) under[ch] += out.image.at(0, ch, r, c);
                under_n += 1.0;
            }
        }
        Rgb colour = palette[0];
        double best = -1.0;
        for (const Rgb& p : palette) {
            double d2 = 0.0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double diff = p[ch] - under[ch] / std::max(under_n, 1.0);
                d2 += diff * diff;
            }
            if (d2 > best) {
                best = d2;
                colour = p;
            }
        }
        BoundingBox box{1 << 30, 1 << 30, -1, -1};
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                // 4x4 supersampled coverage for anti-aliased edges
                int inside = 0;
                for (int sy = 0; sy < 4; ++sy) {
                    for (int sx = 0; sx < 4; ++sx) {
                        inside += q.contains(static_cast<double>(r) + (sy + 0.5) / 4.0,
                                             static_cast<double>(c) + (sx + 0.5) / 4.0)
                                      ? 1
                                      : 0;
                    }
                }
                if (inside == 0) continue;
                const double a = inside / 16.0;
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    double& v = out.image.at(0, ch, r, c);
                    v = (1.0 - a) * v + a * colour[ch];
                }
                if (a >= 0.5) {
                    const int ri = static_cast<int>(r);
                    const int ci = static_cast<int>(c);
                    box.row0 = std::min(box.row0, ri);
                    box.col0 = std::min(box.col0, ci);
                    box.row1 = std::max(box.row1, ri);
                    box.col1 = std::max(box.col1, ci);
                }
            }
        }
        out.bbox = box;
    }
    if (noise_sd > 0.0) {
        Rng noise_rng(noise_seed);
        std::normal_distribution<double> g(0.0, noise_sd);
        for (double& px : out.image.storage()) {
            px = std::clamp(px + g(noise_rng), 0.0, 1.0);
        }
    }
    quantize_8bit(out.image);
    return out;
}

DatasetManifest synth_dataset(std::size_t n_inliers, std::size_t n_outliers, std::uint64_t seed,
                              const SynthConfig& config, const std::filesystem::path& out_dir) {
    if (config.test_inliers > n_inliers) {
        throw std::invalid_argument(
            fmt::format("test_inliers {} exceeds n_inliers {}", config.test_inliers, n_inliers));
    }
    if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
        throw std::invalid_argument("val_fraction must lie in [0, 1)");
    }
    const std::size_t total = n_inliers + n_outliers;
    Rng rng(seed ^ 0x51a7ULL);
    // interleave outliers among inliers so ids carry no label information
    std::vector<bool> is_outlier(total, false);
    std::fill(is_outlier.begin(), is_outlier.begin() + static_cast<std::ptrdiff_t>(n_outliers), true);
    std::shuffle(is_outlier.begin(), is_outlier.end(), rng);

    std::vector<std::size_t> inlier_idx;
    for (std::size_t i = 0; i < total; ++i) {
        if (!is_outlier[i]) inlier_idx.push_back(i);
    }
    std::shuffle(inlier_idx.begin(), inlier_idx.end(), rng);
    std::vector<Split> split(total, Split::Test);
    const std::size_t trainable = n_inliers - config.test_inliers;
    const auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(trainable)));
    for (std::size_t k = config.test_inliers; k < n_inliers; ++k) {
        split[inlier_idx[k]] = k - config.test_inliers < trainable - n_val ? Split::Train : Split::Val;
    }

    std::filesystem::create_directories(out_dir / "images");
    DatasetManifest m;
    m.geometry = config.geometry;
    m.geometry.width_px = config.width;
    m.geometry.height_px = config.height;
    m.seed = seed;
    m.source = "synthetic";
    m.height = config.height;
    m.width = config.width;
    for (std::size_t i = 0; i < total; ++i) {
        const SynthImage s = render_synthetic(config, seed, i, is_outlier[i]);
        ImageRecord r;
        r.id = fmt::format("img_{:05d}", i);
        r.path = fmt::format("images/{}.png", r.id);
        r.label = is_outlier[i] ? Label::Outlier : Label::Inlier;
        r.altitude_m = config.geometry.altitude_m;
        r.split = split[i];
        r.bbox = s.bbox;
        write_png(out_dir / r.path, s.image);
        m.images.push_back(std::move(r));
    }
    write_manifest(m, out_dir / "manifest.ndjson");
    return m;
}

}  // namespace seavae
