#pragma once

// Independent reference implementations and generators for latent-analysis tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "seavae/latent.hpp"

namespace seavae::oracle {

inline PointSet gaussian_points(std::size_t n, std::size_t dim, std::uint64_t seed, double scale) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    PointSet p(n, dim);
    for (double& v : p.values) {
        v = g(rng);
    }
    return p;
}

struct LabeledPoints {
    PointSet points;
    std::vector<int> labels;
};

// Two isotropic unit-variance blobs whose centres sit 10 apart along a random direction.
inline LabeledPoints two_blobs(std::size_t per_blob, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (double& v : dir) {
        v = g(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    LabeledPoints out{PointSet(2 * per_blob, dim), std::vector<int>(2 * per_blob)};
    for (std::size_t i = 0; i < 2 * per_blob; ++i) {
        const double side = i < per_blob ? -5.0 : 5.0;
        out.labels[i] = i < per_blob ? 0 : 1;
        for (std::size_t k = 0; k < dim; ++k) {
            out.points.at(i, k) = side * dir[k] / norm + g(rng);
        }
    }
    return out;
}

struct Pt {
    double x, y;
};

inline double cross(Pt o, Pt a, Pt b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain.
inline std::vector<Pt> convex_hull(std::vector<Pt> p) {
    std::sort(p.begin(), p.end(), [](Pt a, Pt b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    if (p.size() < 3) {
        return p;
    }
    std::vector<Pt> h(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
        h[k++] = p[i - 1];
    }
    h.resize(k - 1);
    return h;
}

// Separating-axis test over the edge normals of both hulls.
inline bool hulls_disjoint(const PointSet& pts, const std::vector<int>& labels) {
    std::vector<Pt> a, b;
    for (std::size_t i = 0; i < pts.n; ++i) {
        (labels[i] == 0 ? a : b).push_back({pts.at(i, 0), pts.at(i, 1)});
    }
    const auto ha = convex_hull(a);
    const auto hb = convex_hull(b);
    auto separated_along = [&](Pt n) {
        double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
        for (Pt p : ha) {
            const double d = p.x * n.x + p.y * n.y;
            amin = std::min(amin, d);
            amax = std::max(amax, d);
        }
        for (Pt p : hb) {
            const double d = p.x * n.x + p.y * n.y;
            bmin = std::min(bmin, d);
            bmax = std::max(bmax, d);
        }
        return amax < bmin || bmax < amin;
    };
    for (const auto* h : {&ha, &hb}) {
        for (std::size_t i = 0; i < h->size(); ++i) {
            const Pt p = (*h)[i];
            const Pt q = (*h)[(i + 1) % h->size()];
            if (separated_along({q.y - p.y, p.x - q.x})) {
                return true;
            }
        }
    }
    return false;
}

inline std::size_t kl_upticks(const std::vector<double>& trace, std::size_t last) {
    std::size_t up = 0;
    for (std::size_t i = trace.size() - last + 1; i < trace.size(); ++i) {
        if (trace[i] > trace[i - 1]) ++up;
    }
    return up;
}

inline PointSet grid_points(std::size_t rows, std::size_t cols, double spacing) {
    PointSet p(rows * cols, 2);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            p.at(r * cols + c, 0) = spacing * static_cast<double>(c);
            p.at(r * cols + c, 1) = spacing * static_cast<double>(r);
        }
    }
    return p;
}

// Sorted full distance list per point; k-th entry after dropping self.
inline std::vector<double> kth_distances(const PointSet& p, std::size_t k, std::size_t begin, std::size_t end) {
    std::vector<double> out;
    for (std::size_t i = begin; i < end; ++i) {
        std::vector<double> d;
        for (std::size_t j = 0; j < p.n; ++j) {
            if (j != i) d.push_back(std::hypot(p.at(i, 0) - p.at(j, 0), p.at(i, 1) - p.at(j, 1)));
        }
        std::sort(d.begin(), d.end());
        out.push_back(d[k - 1]);
    }
    return out;
}

// A few Gaussian clusters plus uniform background noise, with some exact duplicates.
inline PointSet clustered_points(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> box(-10.0, 10.0);
    std::uniform_int_distribution<int> ncl(1, 4);
    const int clusters = ncl(rng);
    std::vector<Pt> centres(static_cast<std::size_t>(clusters));
    for (auto& c : centres) c = {box(rng), box(rng)};
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
    PointSet p(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = u(rng);
        if (i > 0 && r < 0.05) {
            std::uniform_int_distribution<std::size_t> prev(0, i - 1);
            const std::size_t j = prev(rng);
            p.at(i, 0) = p.at(j, 0);
            p.at(i, 1) = p.at(j, 1);
        } else if (r < 0.3) {
            p.at(i, 0) = box(rng);
            p.at(i, 1) = box(rng);
        } else {
            const Pt c = centres[pick(rng)];
            p.at(i, 0) = c.x + g(rng);
            p.at(i, 1) = c.y + g(rng);
        }
    }
    return p;
}

// Reference DBSCAN from the three-category definition: core points by count,
// clusters as connected components of the core graph (union-find), numbered
// by smallest core index; a border point takes the smallest adjacent cluster id.
inline ClusterAssignment brute_force_dbscan(const PointSet& p, const DbscanParams& params) {
    const std::size_t n = p.n;
    auto near = [&](std::size_t i, std::size_t j) {
        const double dx = p.at(i, 0) - p.at(j, 0);
        const double dy = p.at(i, 1) - p.at(j, 1);
        return std::sqrt(dx * dx + dy * dy) <= params.epsilon;
    };
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) c += near(i, j) ? 1 : 0;
        core[i] = c >= params.min_pts;
    }
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (core[i] && core[j] && near(i, j)) parent[find(i)] = find(j);
    ClusterAssignment out{std::vector<int>(n, kNoise), std::vector<PointRole>(n, PointRole::Noise), 0};
    std::vector<int> id_of_root(n, kNoise);
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i]) continue;
        const std::size_t r = find(i);
        if (id_of_root[r] == kNoise) id_of_root[r] = static_cast<int>(out.cluster_count++);
        out.labels[i] = id_of_root[r];
        out.roles[i] = PointRole::Core;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        int best = kNoise;
        for (std::size_t j = 0; j < n; ++j) {
            if (core[j] && near(i, j) && (best == kNoise || out.labels[j] < best)) best = out.labels[j];
        }
        if (best != kNoise) {
            out.labels[i] = best;
            out.roles[i] = PointRole::Border;
        }
    }
    return out;
}

inline std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % folds;
    return fold;
}

// Plain-sum held-out log-likelihood; fine for bandwidths where nothing underflows.
inline double direct_cv_loglik(const PointSet& p, const std::vector<std::size_t>& fold, double h) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.n; ++i) {
        double s = 0.0;
        std::size_t m = 0;
        for (std::size_t j = 0; j < p.n; ++j) {
            if (fold[j] == fold[i]) continue;
            const double dx = p.at(i, 0) - p.at(j, 0);
            const double dy = p.at(i, 1) - p.at(j, 1);
            s += std::exp(-(dx * dx + dy * dy) / (2 * h * h)) / (2 * M_PI * h * h);
            ++m;
        }
        total += std::log(s / static_cast<double>(m));
    }
    return total / static_cast<double>(p.n);
}

// Midpoint-rule integral over the data bounding box widened by `margin`.
inline double grid_integral(const KdeModel& m, double margin, double step) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (std::size_t i = 0; i < m.points.n; ++i) {
        x0 = std::min(x0, m.points.at(i, 0));
        x1 = std::max(x1, m.points.at(i, 0));
        y0 = std::min(y0, m.points.at(i, 1));
        y1 = std::max(y1, m.points.at(i, 1));
    }
    x0 -= margin;
    x1 += margin;
    y0 -= margin;
    y1 += margin;
    double s = 0.0;
    for (double x = x0 + step / 2; x < x1; x += step)
        for (double y = y0 + step / 2; y < y1; y += step) s += m.density(x, y);
    return s * step * step;
}

}  // namespace seavae::oracle
