#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "latent_oracles.hpp"
#include "seavae/latent.hpp"

using namespace seavae;
using namespace seavae::oracle;

TEST_CASE("affinity rows are calibrated to the target perplexity") {
    const PointSet pts = gaussian_points(120, 5, 3, 1.0);
    for (double perp : {5.0, 15.0, 30.0}) {
        const Affinities a = tsne_affinities(pts, perp);
        for (std::size_t i = 0; i < pts.n; ++i) {
            double sum = 0.0;
            double h = 0.0;
            for (std::size_t j = 0; j < pts.n; ++j) {
                const double p = a.conditional.at(i, j);
                sum += p;
                if (p > 0.0) {
                    h -= p * std::log2(p);
                }
            }
            CHECK(a.conditional.at(i, i) == 0.0);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(std::abs(h - std::log2(perp)) < 1e-3);
            CHECK(std::abs(a.entropy_bits[i] - std::log2(perp)) < 1e-3);
        }
    }
}

TEST_CASE("affinities of far-scaled data still calibrate") {
    PointSet pts = gaussian_points(60, 4, 9, 1000.0);
    const Affinities a = tsne_affinities(pts, 10.0);
    for (double bits : a.entropy_bits) {
        CHECK(std::abs(bits - std::log2(10.0)) < 1e-3);
    }
}

TEST_CASE("t-SNE preconditions") {
    CHECK_THROWS_AS(tsne_reduce(gaussian_points(9, 3, 1, 1.0)), std::invalid_argument);
    const PointSet pts = gaussian_points(30, 3, 1, 1.0);
    CHECK_THROWS_AS(tsne_reduce(pts, {.perplexity = 10.0}), std::invalid_argument);
    CHECK_THROWS_AS(tsne_reduce(pts, {.perplexity = 1.0}), std::invalid_argument);
    PointSet bad = pts;
    bad.values[4] = std::nan("");
    CHECK_THROWS_AS(tsne_reduce(bad, {.perplexity = 5.0}), std::invalid_argument);
}

TEST_CASE("t-SNE tolerates duplicate points") {
    PointSet pts = gaussian_points(30, 3, 4, 1.0);
    std::copy_n(pts.row(0).begin(), 3, pts.row(1).begin());
    const TsneResult r = tsne_reduce(pts, {.perplexity = 5.0, .iterations = 300, .seed = 1});
    CHECK(r.embedding.all_finite());
}

TEST_CASE("t-SNE separates two blobs and its objective settles") {
    int separated = 0;
    int settled = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto blobs = two_blobs(50, 16, 100 + seed);
        const TsneResult r = tsne_reduce(blobs.points, {.seed = seed});
        CHECK(r.embedding.n == 100);
        CHECK(r.embedding.dim == 2);
        CHECK(r.kl_trace.size() == 1000);
        CHECK(r.kl_trace.back() < r.kl_trace[300]);
        separated += hulls_disjoint(r.embedding, blobs.labels) ? 1 : 0;
        settled += kl_upticks(r.kl_trace, 100) <= 5 ? 1 : 0;
    }
    CHECK(separated >= 18);
    // a few seeds are still escaping a local arrangement near iteration 1000
    // (the KL bumps then keeps falling); 17 of 20 settle at this setting
    CHECK(settled >= 17);
}

TEST_CASE("t-SNE is deterministic for a fixed seed") {
    const auto blobs = two_blobs(20, 4, 7);
    const TsneResult a = tsne_reduce(blobs.points, {.perplexity = 5.0, .iterations = 200, .seed = 3});
    const TsneResult b = tsne_reduce(blobs.points, {.perplexity = 5.0, .iterations = 200, .seed = 3});
    CHECK(a.embedding.values == b.embedding.values);
}

TEST_CASE("separating-axis oracle sanity") {
    PointSet p(6, 2, {0, 0, 1, 0, 0, 1, 5, 5, 6, 5, 5, 6});
    CHECK(hulls_disjoint(p, {0, 0, 0, 1, 1, 1}));
    PointSet q(6, 2, {0, 0, 4, 0, 0, 4, 1, 1, 6, 5, 5, 6});
    CHECK_FALSE(hulls_disjoint(q, {0, 0, 0, 1, 1, 1}));
}

TEST_CASE("k-distance elbow on a regular grid") {
    for (double s : {0.5, 1.0, 3.0}) {
        const PointSet grid = grid_points(12, 9, s);
        const KDistance kd = k_distance_epsilon(grid, 1);
        CHECK(kd.epsilon >= s - 1e-12);
        CHECK(kd.epsilon <= s * std::sqrt(2.0) + 1e-12);
        CHECK_FALSE(kd.degenerate);
    }
}

TEST_CASE("k-distance elbow sits between the two scales") {
    // tight cluster (k-distances ~0.05) plus a sparse halo (k-distances ~5)
    Rng rng(5);
    std::normal_distribution<double> tight(0.0, 0.05);
    std::uniform_real_distribution<double> halo(-60.0, 60.0);
    PointSet pts(330, 2);
    for (std::size_t i = 0; i < 300; ++i) {
        pts.at(i, 0) = tight(rng);
        pts.at(i, 1) = tight(rng);
    }
    for (std::size_t i = 300; i < 330; ++i) {
        pts.at(i, 0) = halo(rng);
        pts.at(i, 1) = halo(rng);
    }
    const std::size_t k = 4;
    const auto tight_scale = kth_distances(pts, k, 0, 300);
    const auto halo_scale = kth_distances(pts, k, 300, 330);
    const double tight_hi = *std::max_element(tight_scale.begin(), tight_scale.end());
    const double halo_lo = *std::min_element(halo_scale.begin(), halo_scale.end());
    REQUIRE(tight_hi < halo_lo);
    const KDistance kd = k_distance_epsilon(pts, k);
    CHECK(kd.epsilon >= tight_hi);
    CHECK(kd.epsilon <= halo_lo);
}

TEST_CASE("k-distance degenerate and invalid inputs") {
    PointSet same(8, 2);
    std::fill(same.values.begin(), same.values.end(), 1.5);
    const KDistance kd = k_distance_epsilon(same, 3);
    CHECK(kd.epsilon == 0.0);
    CHECK(kd.degenerate);
    CHECK_THROWS_AS(k_distance_epsilon(PointSet(4, 2), 4), std::invalid_argument);
    CHECK_THROWS_AS(k_distance_epsilon(PointSet(4, 2), 0), std::invalid_argument);
}

TEST_CASE("dbscan small cases") {
    PointSet three(3, 2, {0, 0, 0.1, 0, 0, 0.1});
    const auto a = dbscan(three, {.epsilon = 1.0, .min_pts = 4});
    CHECK(a.cluster_count == 0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.labels[i] == kNoise);
        CHECK(a.roles[i] == PointRole::Noise);
    }

    PointSet blob(11, 2);
    for (std::size_t i = 0; i < 10; ++i) {
        blob.at(i, 0) = 0.05 * static_cast<double>(i % 3);
        blob.at(i, 1) = 0.05 * static_cast<double>(i / 3);
    }
    blob.at(10, 0) = 100.0;
    const auto b = dbscan(blob, {.epsilon = 1.0, .min_pts = 4});
    CHECK(b.cluster_count == 1);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(b.labels[i] == 0);
        CHECK(b.roles[i] == PointRole::Core);
    }
    CHECK(b.labels[10] == kNoise);
    CHECK(b.roles[10] == PointRole::Noise);

    CHECK_THROWS_AS(dbscan(blob, {.epsilon = 0.0, .min_pts = 4}), std::invalid_argument);
    CHECK_THROWS_AS(dbscan(blob, {.epsilon = 1.0, .min_pts = 0}), std::invalid_argument);
}

TEST_CASE("dbscan neighbourhoods are closed balls") {
    // four collinear points exactly epsilon apart
    PointSet line(4, 2, {0, 0, 1, 0, 2, 0, 3, 0});
    const auto a = dbscan(line, {.epsilon = 1.0, .min_pts = 3});
    CHECK(a.cluster_count == 1);
    CHECK(a.roles[0] == PointRole::Border);
    CHECK(a.roles[1] == PointRole::Core);
    CHECK(a.roles[3] == PointRole::Border);
}

TEST_CASE("dbscan equals the brute-force reference on random instances") {
    Rng rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 200);
    std::uniform_real_distribution<double> eps(0.2, 3.0);
    std::uniform_int_distribution<std::size_t> minpts(1, 8);
    for (int trial = 0; trial < 60; ++trial) {
        const PointSet pts = clustered_points(size(rng), 1000 + static_cast<std::uint64_t>(trial));
        const DbscanParams params{eps(rng), minpts(rng)};
        const auto got = dbscan(pts, params);
        const auto want = brute_force_dbscan(pts, params);
        CHECK(got.labels == want.labels);
        CHECK(got.roles == want.roles);
        CHECK(got.cluster_count == want.cluster_count);
    }
}

TEST_CASE("dbscan core membership is permutation invariant") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const PointSet pts = clustered_points(150, 50 + static_cast<std::uint64_t>(trial));
        const DbscanParams params{1.0, 4};
        std::vector<std::size_t> perm(pts.n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        PointSet shuffled(pts.n, 2);
        for (std::size_t i = 0; i < pts.n; ++i) {
            std::copy_n(pts.row(perm[i]).begin(), 2, shuffled.row(i).begin());
        }
        const auto a = dbscan(pts, params);
        const auto b = dbscan(shuffled, params);
        // clusters as sets of original indices, restricted to core points (border ties may differ)
        std::map<int, std::set<std::size_t>> ca, cb;
        for (std::size_t i = 0; i < pts.n; ++i) {
            if (a.roles[i] == PointRole::Core) {
                ca[a.labels[i]].insert(i);
            }
            if (b.roles[i] == PointRole::Core) {
                cb[b.labels[i]].insert(perm[i]);
            }
            CHECK((a.roles[perm[i]] == PointRole::Noise) == (b.roles[i] == PointRole::Noise));
        }
        std::set<std::set<std::size_t>> sa, sb;
        for (auto& [k, v] : ca) sa.insert(v);
        for (auto& [k, v] : cb) sb.insert(v);
        CHECK(sa == sb);
    }
}

TEST_CASE("kde single point density") {
    const KdeModel m{PointSet(1, 2, {0.0, 0.0}), 1.0};
    CHECK(std::abs(m.density(0.0, 0.0) - 1.0 / (2.0 * M_PI)) < 1e-12);
    const KdeModel m2{PointSet(1, 2, {1.0, -2.0}), 0.3};
    CHECK(std::abs(m2.density(1.0, -2.0) - 1.0 / (2.0 * M_PI * 0.09)) < 1e-9);
    CHECK(std::abs(m2.log_density(1.0, -2.0) - std::log(1.0 / (2.0 * M_PI * 0.09))) < 1e-12);
}

TEST_CASE("kde tails, monotonicity and symmetry") {
    const PointSet pts = gaussian_points(50, 2, 8, 1.0);
    const double h = 0.4;
    const KdeModel m{pts, h};
    double max_x = 0.0;
    for (double v : pts.values) {
        max_x = std::max(max_x, std::abs(v));
    }
    CHECK(m.density(max_x + 21.0 * h, 0.0) < 1e-12);

    const KdeModel single{PointSet(1, 2, {2.0, 3.0}), h};
    for (int a = 0; a < 8; ++a) {
        const double th = a * M_PI / 4.0;
        CHECK(single.density(2.0, 3.0) >= single.density(2.0 + 10 * h * std::cos(th), 3.0 + 10 * h * std::sin(th)));
    }

    PointSet mirrored(100, 2);
    for (std::size_t i = 0; i < 50; ++i) {
        mirrored.at(i, 0) = pts.at(i, 0);
        mirrored.at(i, 1) = pts.at(i, 1);
        mirrored.at(50 + i, 0) = -pts.at(i, 0);
        mirrored.at(50 + i, 1) = pts.at(i, 1);
    }
    const KdeModel mm{mirrored, h};
    for (double x : {0.3, 1.1, 2.7}) {
        CHECK(mm.density(x, 0.5) == doctest::Approx(mm.density(-x, 0.5)).epsilon(1e-12));
    }
}

TEST_CASE("kde density integrates to one on a covering grid") {
    for (double h : {0.2, 0.7}) {
        const PointSet pts = gaussian_points(40, 2, 12, 1.0);
        const KdeModel m{pts, h};
        const double integral = grid_integral(m, 10.0 * h, 0.05 * h);
        CHECK(integral >= 0.99);
        CHECK(integral <= 1.01);
    }
}

TEST_CASE("duplicating a training point never lowers density there") {
    const PointSet pts = gaussian_points(30, 2, 13, 1.0);
    const KdeModel m{pts, 0.5};
    for (std::size_t i = 0; i < pts.n; ++i) {
        PointSet more(pts.n + 1, 2);
        std::copy(pts.values.begin(), pts.values.end(), more.values.begin());
        more.at(pts.n, 0) = pts.at(i, 0);
        more.at(pts.n, 1) = pts.at(i, 1);
        const KdeModel m2{more, 0.5};
        CHECK(m2.density(pts.at(i, 0), pts.at(i, 1)) >= m.density(pts.at(i, 0), pts.at(i, 1)) - 1e-15);
    }
}

TEST_CASE("cross-validation picks the middle bandwidth on standard-normal data") {
    const std::vector<double> grid{0.01, 0.5, 50.0};
    int middle = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PointSet pts = gaussian_points(200, 2, 300 + seed, 1.0);
        const KdeFit fit = kde_fit(pts, grid, 20, seed);
        middle += fit.chosen == 1 ? 1 : 0;
        CHECK(fit.model.bandwidth == grid[fit.chosen]);
        CHECK(fit.model.points.n == 200);
    }
    CHECK(middle >= 5);
}

TEST_CASE("cross-validated log-likelihood matches a direct computation") {
    const PointSet pts = gaussian_points(60, 2, 21, 1.0);
    const std::vector<double> grid{0.1, 0.3, 1.0, 3.0};
    const KdeFit fit = kde_fit(pts, grid, 5, 9);
    const auto folds = fold_assignment(pts.n, 5, 9);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        CHECK(fit.cv_log_likelihood[g] == doctest::Approx(direct_cv_loglik(pts, folds, grid[g])).epsilon(1e-9));
    }
    const auto best = std::max_element(fit.cv_log_likelihood.begin(), fit.cv_log_likelihood.end());
    CHECK(fit.chosen == static_cast<std::size_t>(best - fit.cv_log_likelihood.begin()));
}

TEST_CASE("kde_fit rejects bad arguments") {
    const PointSet pts = gaussian_points(10, 2, 1, 1.0);
    const std::vector<double> grid{0.5};
    CHECK_THROWS_AS(kde_fit(pts, std::vector<double>{}, 5), std::invalid_argument);
    CHECK_THROWS_AS(kde_fit(pts, std::vector<double>{-1.0}, 5), std::invalid_argument);
    CHECK_THROWS_AS(kde_fit(pts, grid, 20), std::invalid_argument);
    CHECK_THROWS_AS(kde_fit(gaussian_points(30, 3, 1, 1.0), grid, 5), std::invalid_argument);
}

TEST_CASE("default bandwidth grid") {
    const auto g = default_bandwidth_grid();
    REQUIRE(g.size() == 30);
    CHECK(g.front() == doctest::Approx(0.01));
    CHECK(g.back() == doctest::Approx(10.0));
    for (std::size_t i = 1; i < g.size(); ++i) {
        CHECK(g[i] / g[i - 1] == doctest::Approx(g[1] / g[0]));
    }
}

TEST_CASE("percentile uses linear interpolation between order statistics") {
    std::vector<double> s(100);
    std::iota(s.begin(), s.end(), 1.0);
    CHECK(percentile(s, 80.0) == doctest::Approx(80.2).epsilon(1e-12));
    const auto f = percentile_flag(s, 80.0, FlagSide::Below);
    CHECK(f.threshold == doctest::Approx(80.2).epsilon(1e-12));
    CHECK(f.count() == 80);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(f.flags[i] == (i < 80));
    }
    const std::vector<double> four{4.0, 1.0, 3.0, 2.0};
    CHECK(percentile(four, 50.0) == 2.5);
    CHECK(percentile(four, 0.0) == 1.0);
    CHECK(percentile(four, 100.0) == 4.0);
    CHECK(percentile(four, 25.0) == doctest::Approx(1.75));
}

TEST_CASE("percentile_flag degenerate and invalid cases") {
    const std::vector<double> same(20, 3.0);
    CHECK(percentile_flag(same, 50.0, FlagSide::Below).count() == 0);
    CHECK(percentile_flag(same, 50.0, FlagSide::Above).count() == 0);
    CHECK_THROWS_AS(percentile_flag(same, 0.0, FlagSide::Below), std::invalid_argument);
    CHECK_THROWS_AS(percentile_flag(same, 100.0, FlagSide::Below), std::invalid_argument);
    CHECK_THROWS_AS(percentile_flag(std::vector<double>{}, 50.0, FlagSide::Below), std::invalid_argument);
}

TEST_CASE("percentile_flag sides partition untied scores") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(37);
        for (double& v : s) v = u(rng);
        const double p = 1.0 + 98.0 * u(rng);
        const auto lo = percentile_flag(s, p, FlagSide::Below);
        const auto hi = percentile_flag(s, p, FlagSide::Above);
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK_FALSE((lo.flags[i] && hi.flags[i]));
            if (s[i] != lo.threshold) {
                CHECK((lo.flags[i] || hi.flags[i]));
            }
        }
        // tightening never grows the flagged set
        const auto tighter = percentile_flag(s, p / 2.0, FlagSide::Below);
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK((!tighter.flags[i] || lo.flags[i]));
        }
    }
}

TEST_CASE("low-density outliers fall under the 20th percentile") {
    PointSet pts = gaussian_points(200, 2, 77, 1.0);
    PointSet all(205, 2);
    std::copy(pts.values.begin(), pts.values.end(), all.values.begin());
    const double far[5][2] = {{15, 0}, {-14, 3}, {0, 18}, {9, -12}, {-11, -11}};
    for (std::size_t i = 0; i < 5; ++i) {
        all.at(200 + i, 0) = far[i][0];
        all.at(200 + i, 1) = far[i][1];
    }
    const KdeFit fit = kde_fit(all, default_bandwidth_grid(), 20, 3);
    const auto dens = kde_score(fit.model, all);
    const auto flags = percentile_flag(dens, 20.0, FlagSide::Below);
    for (std::size_t i = 200; i < 205; ++i) {
        CHECK(flags.flags[i]);
    }
}
