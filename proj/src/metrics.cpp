#include "seavae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace seavae {

Confusion confusion(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
    if (predicted.size() != truth.size()) {
        throw std::invalid_argument(
            fmt::format("{} predictions but {} labels", predicted.size(), truth.size()));
    }
    Confusion c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (predicted[i]) {
            truth[i] ? ++c.tp : ++c.fp;
        } else {
            truth[i] ? ++c.fn : ++c.tn;
        }
    }
    return c;
}

double precision(const Confusion& c) {
    if (c.tp + c.fp == 0) {
        spdlog::warn("precision undefined (no positive predictions); reporting 0");
        return 0.0;
    }
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const Confusion& c) {
    if (c.tp + c.fn == 0) {
        spdlog::warn("recall undefined (no positive labels); reporting 0");
        return 0.0;
    }
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f1_score(const Confusion& c) {
    const double p = precision(c);
    const double r = recall(c);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

PrCurve pr_curve(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument(fmt::format("{} scores but {} labels", scores.size(), labels.size()));
    }
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    if (positives == 0 || positives == labels.size()) {
        throw std::invalid_argument("precision-recall curve needs both positive and negative labels");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    PrCurve curve;
    std::size_t tp = 0;
    std::size_t seen = 0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        const double t = scores[order[k]];
        // take every item tied at this score together
        while (k < order.size() && scores[order[k]] == t) {
            tp += labels[order[k]] ? 1 : 0;
            ++seen;
            ++k;
        }
        const double r = static_cast<double>(tp) / static_cast<double>(positives);
        const double p = static_cast<double>(tp) / static_cast<double>(seen);
        curve.points.push_back({t, r, p});
        curve.average_precision += (r - prev_recall) * p;
        prev_recall = r;
    }
    return curve;
}

std::size_t sturges_bins(std::size_t n) {
    if (n == 0) {
        throw std::invalid_argument("Sturges' rule needs a non-empty sample");
    }
    return static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n)) + 1.0));
}

double overlap_coefficient(std::span<const double> a, std::span<const double> b, std::size_t bins) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("overlap coefficient needs two non-empty samples");
    }
    if (bins == 0) {
        bins = sturges_bins(std::min(a.size(), b.size()));
    }
    const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
    const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
    const double lo = std::min(*amin, *bmin);
    const double hi = std::max(*amax, *bmax);
    if (hi == lo) {
        return 1.0;
    }
    auto hist = [&](std::span<const double> v) {
        std::vector<double> h(bins, 0.0);
        for (double x : v) {
            auto k = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
            h[std::min(k, bins - 1)] += 1.0 / static_cast<double>(v.size());
        }
        return h;
    };
    const auto ha = hist(a);
    const auto hb = hist(b);
    double s = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
        s += std::min(ha[k], hb[k]);
    }
    return s;
}

}  // namespace seavae
