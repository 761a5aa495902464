#include "seavae/latent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace seavae {

namespace {

constexpr double kTwoPi = 6.283185307179586;

double logsumexp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) {
        return m;
    }
    double s = 0.0;
    for (double x : v) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

void require_2d(const PointSet& points, const char* what) {
    if (points.dim != 2) {
        throw std::invalid_argument(fmt::format("{} expects 2-D points, got dimension {}", what, points.dim));
    }
}

}  // namespace

PointSet::PointSet(std::size_t rows, std::size_t cols, std::vector<double> v)
    : n(rows), dim(cols), values(std::move(v)) {
    if (values.size() != rows * cols) {
        throw std::invalid_argument(
            fmt::format("point set {}x{} needs {} values, got {}", rows, cols, rows * cols, values.size()));
    }
}

bool PointSet::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

Affinities tsne_affinities(const PointSet& points, double perplexity, double tolerance) {
    const std::size_t n = points.n;
    Affinities out{PointSet(n, n), std::vector<double>(n), std::vector<double>(n)};
    const double target_bits = std::log2(perplexity);
    std::vector<double> dist(n);
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            dist[j] = j == i ? 0.0 : squared_distance(points.row(i), points.row(j));
            if (j != i) {
                dmin = std::min(dmin, dist[j]);
            }
        }
        double beta = 1.0;
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double bits = 0.0;
        for (int iter = 0; iter < 500; ++iter) {
            double sum = 0.0;
            double weighted = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) {
                    p[j] = 0.0;
                    continue;
                }
                const double shifted = dist[j] - dmin;
                p[j] = std::exp(-beta * shifted);
                sum += p[j];
                weighted += p[j] * shifted;
            }
            // H = log(sum) + beta * E[d - dmin], in nats
            bits = (std::log(sum) + beta * weighted / sum) / std::log(2.0);
            for (double& v : p) {
                v /= sum;
            }
            const double diff = bits - target_bits;
            if (std::abs(diff) < tolerance * 1e-2) {
                break;
            }
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = lo == 0.0 ? beta * 0.5 : 0.5 * (beta + lo);
            }
        }
        std::copy(p.begin(), p.end(), out.conditional.row(i).begin());
        out.entropy_bits[i] = bits;
        out.beta[i] = beta;
    }
    return out;
}

TsneResult tsne_reduce(const PointSet& points, const TsneOptions& options) {
    const std::size_t n = points.n;
    if (n < 10) {
        throw std::invalid_argument(fmt::format("t-SNE needs at least 10 points, got {}", n));
    }
    if (!(options.perplexity > 1.0) || !(options.perplexity < static_cast<double>(n) / 3.0)) {
        throw std::invalid_argument(fmt::format("perplexity {} must lie in (1, N/3) = (1, {:.3f})",
                                                options.perplexity, static_cast<double>(n) / 3.0));
    }
    if (!points.all_finite()) {
        throw std::invalid_argument("t-SNE input contains non-finite values");
    }

    const Affinities aff = tsne_affinities(points, options.perplexity, options.perplexity_tolerance);
    PointSet p(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            p.at(i, j) = (aff.conditional.at(i, j) + aff.conditional.at(j, i)) / (2.0 * static_cast<double>(n));
        }
    }

    TsneResult result{PointSet(n, 2), {}, aff.entropy_bits};
    PointSet& y = result.embedding;
    {
        Rng rng(options.seed);
        std::normal_distribution<double> init(0.0, 1e-4);
        for (double& v : y.values) {
            v = init(rng);
        }
    }
    std::vector<double> update(n * 2, 0.0);
    std::vector<double> gains(n * 2, 1.0);
    std::vector<double> grad(n * 2);
    PointSet num(n, n);
    result.kl_trace.reserve(options.iterations);

    for (std::size_t t = 0; t < options.iterations; ++t) {
        const double exag = t < options.exaggeration_iterations ? options.exaggeration : 1.0;
        const double momentum = t < options.momentum_switch ? options.initial_momentum : options.final_momentum;

        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            num.at(i, i) = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y.at(i, 0) - y.at(j, 0);
                const double dy = y.at(i, 1) - y.at(j, 1);
                const double v = 1.0 / (1.0 + dx * dx + dy * dy);
                num.at(i, j) = v;
                num.at(j, i) = v;
                z += 2.0 * v;
            }
        }

        double kl = 0.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    continue;
                }
                const double q = num.at(i, j) / z;
                const double pij = p.at(i, j);
                if (pij > 0.0) {
                    kl += pij * std::log(pij / std::max(q, std::numeric_limits<double>::min()));
                }
                const double m = (exag * pij - q) * num.at(i, j);
                grad[2 * i] += 4.0 * m * (y.at(i, 0) - y.at(j, 0));
                grad[2 * i + 1] += 4.0 * m * (y.at(i, 1) - y.at(j, 1));
            }
        }
        result.kl_trace.push_back(kl);

        for (std::size_t k = 0; k < n * 2; ++k) {
            const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
            update[k] = momentum * update[k] - options.learning_rate * gains[k] * grad[k];
            y.values[k] += update[k];
        }
        double mx = 0.0;
        double my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += y.at(i, 0);
            my += y.at(i, 1);
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y.at(i, 0) -= mx;
            y.at(i, 1) -= my;
        }
    }
    return result;
}

KDistance k_distance_epsilon(const PointSet& points, std::size_t k) {
    const std::size_t n = points.n;
    if (k == 0 || n <= k) {
        throw std::invalid_argument(fmt::format("k-distance needs N > k >= 1 (N={}, k={})", n, k));
    }
    KDistance out;
    out.curve.resize(n);
    std::vector<double> d;
    d.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        d.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                d.push_back(squared_distance(points.row(i), points.row(j)));
            }
        }
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        out.curve[i] = std::sqrt(d[k - 1]);
    }
    std::sort(out.curve.begin(), out.curve.end(), std::greater<>());
    const double top = out.curve.front();
    const double bottom = out.curve.back();
    if (top > bottom) {
        double best = -1.0;
        const double span_x = static_cast<double>(n - 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = static_cast<double>(i) / span_x;
            const double yv = (out.curve[i] - bottom) / (top - bottom);
            // chord runs from (0, 1) to (1, 0)
            const double dist = std::abs(x + yv - 1.0) / std::sqrt(2.0);
            if (dist > best) {
                best = dist;
                out.elbow_index = i;
            }
        }
    }
    out.epsilon = out.curve[out.elbow_index];
    out.degenerate = out.epsilon == 0.0;
    return out;
}

std::string to_string(PointRole role) {
    switch (role) {
        case PointRole::Core: return "core";
        case PointRole::Border: return "border";
        case PointRole::Noise: return "noise";
    }
    return "?";
}

void DbscanParams::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw std::invalid_argument(fmt::format("DBSCAN epsilon must be positive and finite, got {}", epsilon));
    }
    if (min_pts < 1) {
        throw std::invalid_argument("DBSCAN min_pts must be at least 1");
    }
}

ClusterAssignment dbscan(const PointSet& points, const DbscanParams& params) {
    params.validate();
    const std::size_t n = points.n;
    const double eps2 = params.epsilon * params.epsilon;
    std::vector<std::vector<std::size_t>> neighbours(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (squared_distance(points.row(i), points.row(j)) <= eps2) {
                neighbours[i].push_back(j);
            }
        }
    }
    ClusterAssignment out{std::vector<int>(n, kNoise), std::vector<PointRole>(n, PointRole::Noise), 0};
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        core[i] = neighbours[i].size() >= params.min_pts;
    }
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || out.labels[i] != kNoise) {
            continue;
        }
        const int id = static_cast<int>(out.cluster_count++);
        out.labels[i] = id;
        frontier.assign(1, i);
        while (!frontier.empty()) {
            const std::size_t p = frontier.back();
            frontier.pop_back();
            for (std::size_t q : neighbours[p]) {
                if (out.labels[q] != kNoise) {
                    continue;
                }
                out.labels[q] = id;
                if (core[q]) {
                    frontier.push_back(q);
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) {
            out.roles[i] = PointRole::Core;
        } else if (out.labels[i] != kNoise) {
            out.roles[i] = PointRole::Border;
        }
    }
    return out;
}

double KdeModel::log_density(double x, double y) const {
    if (points.n == 0) {
        return -std::numeric_limits<double>::infinity();
    }
    std::vector<double> terms(points.n);
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    for (std::size_t i = 0; i < points.n; ++i) {
        const double dx = x - points.at(i, 0);
        const double dy = y - points.at(i, 1);
        terms[i] = -(dx * dx + dy * dy) * inv;
    }
    return logsumexp(terms) - std::log(static_cast<double>(points.n) * bandwidth * bandwidth * kTwoPi);
}

double KdeModel::density(double x, double y) const {
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    double s = 0.0;
    for (std::size_t i = 0; i < points.n; ++i) {
        const double dx = x - points.at(i, 0);
        const double dy = y - points.at(i, 1);
        s += std::exp(-(dx * dx + dy * dy) * inv);
    }
    return s / (static_cast<double>(points.n) * bandwidth * bandwidth * kTwoPi);
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
    if (!(lo > 0.0) || !(hi >= lo) || count == 0) {
        throw std::invalid_argument("log_spaced needs 0 < lo <= hi and count >= 1");
    }
    std::vector<double> out(count);
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return out;
}

std::vector<double> default_bandwidth_grid() { return log_spaced(1e-2, 1e1, 30); }

KdeFit kde_fit(const PointSet& points, std::span<const double> grid, std::size_t folds, std::uint64_t seed) {
    require_2d(points, "kde_fit");
    if (grid.empty()) {
        throw std::invalid_argument("bandwidth grid is empty");
    }
    for (double h : grid) {
        if (!(h > 0.0) || !std::isfinite(h)) {
            throw std::invalid_argument(fmt::format("bandwidth grid entries must be positive, got {}", h));
        }
    }
    if (folds < 2 || points.n < folds) {
        throw std::invalid_argument(
            fmt::format("cross-validation needs 2 <= folds <= N (folds={}, N={})", folds, points.n));
    }
    if (!points.all_finite()) {
        throw std::invalid_argument("KDE input contains non-finite values");
    }
    const std::size_t n = points.n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> fold_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        fold_of[order[i]] = i % folds;
    }

    KdeFit fit;
    fit.grid.assign(grid.begin(), grid.end());
    fit.cv_log_likelihood.assign(grid.size(), 0.0);
    std::vector<double> d2(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            d2[i * n + j] = squared_distance(points.row(i), points.row(j));
        }
    }
    std::vector<std::size_t> fold_size(folds, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ++fold_size[fold_of[i]];
    }
    std::vector<double> terms;
    terms.reserve(n);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double h = grid[g];
        const double inv = 1.0 / (2.0 * h * h);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            terms.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (fold_of[j] != fold_of[i]) {
                    terms.push_back(-d2[i * n + j] * inv);
                }
            }
            const double n_train = static_cast<double>(n - fold_size[fold_of[i]]);
            total += logsumexp(terms) - std::log(n_train * h * h * kTwoPi);
        }
        fit.cv_log_likelihood[g] = total / static_cast<double>(n);
        if (fit.cv_log_likelihood[g] > best) {
            best = fit.cv_log_likelihood[g];
            fit.chosen = g;
        }
    }
    if (!std::isfinite(best)) {
        throw std::invalid_argument("held-out log-likelihood is -inf for every bandwidth; widen the grid");
    }
    fit.model = KdeModel{points, grid[fit.chosen]};
    return fit;
}

std::vector<double> kde_score(const KdeModel& model, const PointSet& queries) {
    require_2d(queries, "kde_score");
    std::vector<double> out(queries.n);
    for (std::size_t i = 0; i < queries.n; ++i) {
        out[i] = model.density(queries.at(i, 0), queries.at(i, 1));
    }
    return out;
}

double percentile(std::span<const double> scores, double p) {
    if (scores.empty()) {
        throw std::invalid_argument("percentile of an empty score list");
    }
    if (!(p >= 0.0 && p <= 100.0)) {
        throw std::invalid_argument(fmt::format("percentile {} outside [0, 100]", p));
    }
    std::vector<double> s(scores.begin(), scores.end());
    std::sort(s.begin(), s.end());
    const double rank = p / 100.0 * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = static_cast<std::size_t>(std::ceil(rank));
    return s[lo] + (rank - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

std::size_t PercentileFlags::count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

PercentileFlags percentile_flag(std::span<const double> scores, double p, FlagSide side) {
    if (!(p > 0.0 && p < 100.0)) {
        throw std::invalid_argument(fmt::format("percentile threshold {} must lie strictly inside (0, 100)", p));
    }
    PercentileFlags out;
    out.threshold = percentile(scores, p);
    out.flags.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.flags[i] = side == FlagSide::Below ? scores[i] < out.threshold : scores[i] > out.threshold;
    }
    return out;
}

}  // namespace seavae
