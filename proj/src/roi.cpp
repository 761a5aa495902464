#include "seavae/roi.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

namespace seavae {

namespace {

// Clockwise starting west, in (row, col) with rows growing downwards.
constexpr int kDirRow[8] = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr int kDirCol[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

int direction_index(int dr, int dc) {
    for (int i = 0; i < 8; ++i) {
        if (kDirRow[i] == dr && kDirCol[i] == dc) {
            return i;
        }
    }
    throw std::logic_error("not a neighbour offset");
}

std::size_t reflect101(long i, std::size_t n) {
    if (n == 1) {
        return 0;
    }
    const long last = static_cast<long>(n) - 1;
    while (i < 0 || i > last) {
        i = i < 0 ? -i : 2 * last - i;
    }
    return static_cast<std::size_t>(i);
}

void require_odd(std::size_t kernel, std::size_t min, const char* what) {
    if (kernel < min || kernel % 2 == 0) {
        throw std::invalid_argument(fmt::format("{} kernel must be odd and >= {}, got {}", what, min, kernel));
    }
}

}  // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1)); }

Heatmap heatmap(std::span<const double> image, std::span<const double> reconstruction, std::size_t channels,
                std::size_t height, std::size_t width) {
    const std::size_t plane = height * width;
    if (image.size() != channels * plane || reconstruction.size() != channels * plane) {
        throw ShapeError(fmt::format("heatmap needs two {}x{}x{} images, got {} and {} values", channels, height,
                                     width, image.size(), reconstruction.size()));
    }
    Heatmap out(height, width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = image[c * plane + i] - reconstruction[c * plane + i];
            out.values[i] += d * d;
        }
    }
    return out;
}

Heatmap heatmap(const Tensor4& image, const Tensor4& reconstruction) {
    if (image.shape() != reconstruction.shape() || image.shape().n != 1) {
        throw ShapeError(fmt::format("heatmap needs two single images of equal shape, got {} and {}",
                                     image.shape().str(), reconstruction.shape().str()));
    }
    const auto& s = image.shape();
    return heatmap(image.data(), reconstruction.data(), s.c, s.h, s.w);
}

Heatmap median_blur(const Heatmap& map, std::size_t kernel) {
    require_odd(kernel, 3, "median");
    const long r = static_cast<long>(kernel / 2);
    Heatmap out(map.height, map.width);
    std::vector<double> window(kernel * kernel);
    const std::size_t mid = window.size() / 2;
    for (std::size_t i = 0; i < map.height; ++i) {
        for (std::size_t j = 0; j < map.width; ++j) {
            std::size_t w = 0;
            for (long di = -r; di <= r; ++di) {
                const std::size_t ii = reflect101(static_cast<long>(i) + di, map.height);
                for (long dj = -r; dj <= r; ++dj) {
                    window[w++] = map.at(ii, reflect101(static_cast<long>(j) + dj, map.width));
                }
            }
            std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(mid), window.end());
            out.at(i, j) = window[mid];
        }
    }
    return out;
}

Mask binarize(const Heatmap& map, double threshold) {
    if (!(threshold >= 0.0)) {
        throw std::invalid_argument(fmt::format("binarization threshold must be >= 0, got {}", threshold));
    }
    Mask out(map.height, map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        out.values[i] = map.values[i] > threshold ? 1 : 0;
    }
    return out;
}

Mask morph(const Mask& mask, MorphOp op, std::size_t kernel, std::size_t iterations) {
    require_odd(kernel, 1, "morphology");
    const long r = static_cast<long>(kernel / 2);
    const long h = static_cast<long>(mask.height);
    const long w = static_cast<long>(mask.width);
    Mask cur = mask;
    Mask next(mask.height, mask.width);
    for (std::size_t it = 0; it < iterations; ++it) {
        for (long i = 0; i < h; ++i) {
            for (long j = 0; j < w; ++j) {
                std::uint8_t v = op == MorphOp::Erode ? 1 : 0;
                for (long di = -r; di <= r; ++di) {
                    for (long dj = -r; dj <= r; ++dj) {
                        const long ii = i + di;
                        const long jj = j + dj;
                        if (ii < 0 || jj < 0 || ii >= h || jj >= w) {
                            continue;
                        }
                        const std::uint8_t m = cur.values[static_cast<std::size_t>(ii * w + jj)];
                        v = op == MorphOp::Erode ? std::min(v, m) : std::max(v, m);
                    }
                }
                next.values[static_cast<std::size_t>(i * w + j)] = v;
            }
        }
        std::swap(cur, next);
    }
    return cur;
}

Mask opening(const Mask& mask, std::size_t kernel, std::size_t iterations) {
    return morph(morph(mask, MorphOp::Erode, kernel, iterations), MorphOp::Dilate, kernel, iterations);
}

std::vector<int> label_components(const Mask& mask, std::size_t* count) {
    const long h = static_cast<long>(mask.height);
    const long w = static_cast<long>(mask.width);
    std::vector<int> labels(mask.values.size(), -1);
    std::vector<std::size_t> stack;
    int next = 0;
    for (std::size_t start = 0; start < mask.values.size(); ++start) {
        if (mask.values[start] == 0 || labels[start] != -1) {
            continue;
        }
        labels[start] = next;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const long pr = static_cast<long>(p) / w;
            const long pc = static_cast<long>(p) % w;
            for (int d = 0; d < 8; ++d) {
                const long r = pr + kDirRow[d];
                const long c = pc + kDirCol[d];
                if (r < 0 || c < 0 || r >= h || c >= w) {
                    continue;
                }
                const auto q = static_cast<std::size_t>(r * w + c);
                if (mask.values[q] != 0 && labels[q] == -1) {
                    labels[q] = next;
                    stack.push_back(q);
                }
            }
        }
        ++next;
    }
    if (count != nullptr) {
        *count = static_cast<std::size_t>(next);
    }
    return labels;
}

std::vector<Pixel> trace_contour(const Mask& mask, Pixel start) {
    const int h = static_cast<int>(mask.height);
    const int w = static_cast<int>(mask.width);
    auto fg = [&](int r, int c) {
        return r >= 0 && c >= 0 && r < h && c < w && mask.values[static_cast<std::size_t>(r * w + c)] != 0;
    };
    if (!fg(start.row, start.col)) {
        throw std::invalid_argument("contour start pixel is background");
    }
    // Next boundary pixel clockwise from the backtrack direction; returns false if isolated.
    auto step = [&](Pixel c, int back, Pixel& next, int& next_back) {
        for (int k = 1; k <= 8; ++k) {
            const int d = (back + k) % 8;
            const Pixel n{c.row + kDirRow[d], c.col + kDirCol[d]};
            if (fg(n.row, n.col)) {
                const int pd = (d + 7) % 8;
                const Pixel prev{c.row + kDirRow[pd], c.col + kDirCol[pd]};
                next = n;
                next_back = direction_index(prev.row - n.row, prev.col - n.col);
                return true;
            }
        }
        return false;
    };

    std::vector<Pixel> contour;
    Pixel cur = start;
    int back = 0;  // west of the first raster pixel is never foreground
    Pixel first_next{};
    bool first = true;
    const std::size_t cap = 4 * mask.values.size() + 8;
    while (contour.size() < cap) {
        Pixel n;
        int nb = 0;
        if (!step(cur, back, n, nb)) {
            return {start};
        }
        if (!first && cur == start && n == first_next) {
            break;
        }
        if (first) {
            first_next = n;
            first = false;
        }
        contour.push_back(cur);
        cur = n;
        back = nb;
    }
    return contour;
}

std::vector<Roi> extract_rois(const Mask& mask, const Heatmap& map, const PixelBounds& bounds) {
    if (mask.height != map.height || mask.width != map.width) {
        throw ShapeError(fmt::format("mask {}x{} and heatmap {}x{} differ", mask.height, mask.width, map.height,
                                     map.width));
    }
    std::size_t count = 0;
    const std::vector<int> labels = label_components(mask, &count);
    struct Acc {
        std::size_t area = 0;
        double error = 0.0;
        double rows = 0.0;
        double cols = 0.0;
        BoundingBox box{1 << 30, 1 << 30, -1, -1};
        Pixel first{-1, -1};
    };
    std::vector<Acc> acc(count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) {
            continue;
        }
        Acc& a = acc[static_cast<std::size_t>(labels[i])];
        const int r = static_cast<int>(i / mask.width);
        const int c = static_cast<int>(i % mask.width);
        if (a.area == 0) {
            a.first = {r, c};
        }
        ++a.area;
        a.error += map.values[i];
        a.rows += r;
        a.cols += c;
        a.box.row0 = std::min(a.box.row0, r);
        a.box.col0 = std::min(a.box.col0, c);
        a.box.row1 = std::max(a.box.row1, r);
        a.box.col1 = std::max(a.box.col1, c);
    }
    std::vector<Roi> out;
    for (const Acc& a : acc) {
        const auto area = static_cast<double>(a.area);
        if (area < bounds.min_px || area > bounds.max_px) {
            continue;
        }
        Roi roi;
        roi.area_px = a.area;
        roi.mean_error = a.error / area;
        roi.centroid_row = a.rows / area;
        roi.centroid_col = a.cols / area;
        roi.bbox = a.box;
        roi.contour = trace_contour(mask, a.first);
        out.push_back(std::move(roi));
    }
    return out;
}

void CameraGeometry::validate() const {
    if (!(fov_h_deg > 0.0 && fov_h_deg < 180.0) || !(fov_v_deg > 0.0 && fov_v_deg < 180.0)) {
        throw std::invalid_argument(
            fmt::format("field of view must lie in (0, 180) degrees, got {} x {}", fov_h_deg, fov_v_deg));
    }
    if (!(altitude_m > 0.0) || !std::isfinite(altitude_m)) {
        throw std::invalid_argument(fmt::format("altitude must be positive, got {}", altitude_m));
    }
    if (width_px == 0 || height_px == 0) {
        throw std::invalid_argument("image size must be positive");
    }
}

void SizeBounds::validate() const {
    if (!(min_side_m > 0.0) || !(max_side_m >= min_side_m)) {
        throw std::invalid_argument(
            fmt::format("object sides need 0 < min <= max, got [{}, {}]", min_side_m, max_side_m));
    }
    if (!(margin >= 1.0)) {
        throw std::invalid_argument(fmt::format("size margin must be >= 1, got {}", margin));
    }
}

Footprint ground_footprint(const CameraGeometry& g) {
    g.validate();
    const double rad = std::numbers::pi / 180.0;
    Footprint f;
    f.width_m = 2.0 * g.altitude_m * std::tan(g.fov_h_deg * rad / 2.0);
    f.height_m = 2.0 * g.altitude_m * std::tan(g.fov_v_deg * rad / 2.0);
    f.pixels_per_metre = static_cast<double>(g.width_px) / f.width_m;
    return f;
}

PixelBounds pixel_bounds(const CameraGeometry& geometry, const SizeBounds& bounds) {
    bounds.validate();
    const double ppm = ground_footprint(geometry).pixels_per_metre;
    const double lo = bounds.min_side_m * ppm;
    const double hi = bounds.max_side_m * ppm;
    return {lo * lo / bounds.margin, hi * hi * bounds.margin};
}

void RoiConfig::validate() const {
    require_odd(median_kernel, 3, "median");
    require_odd(morph_kernel, 1, "morphology");
    if (!(threshold_sigmas >= 0.0) || !(threshold_floor >= 0.0)) {
        throw std::invalid_argument("threshold sigmas and floor must be non-negative");
    }
}

double adaptive_threshold(const Heatmap& blurred, const RoiConfig& config) {
    const auto n = static_cast<double>(blurred.values.size());
    double mean = 0.0;
    for (double v : blurred.values) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : blurred.values) {
        var += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(var / n);
    return std::max(mean + config.threshold_sigmas * sd, config.threshold_floor);
}

RoiResult roi_chain(const Heatmap& map, const PixelBounds& bounds, const RoiConfig& config) {
    config.validate();
    RoiResult out;
    const Heatmap blurred = median_blur(map, config.median_kernel);
    out.threshold = adaptive_threshold(blurred, config);
    out.mask = opening(binarize(blurred, out.threshold), config.morph_kernel, config.morph_iterations);
    out.rois = extract_rois(out.mask, map, bounds);
    for (const Roi& r : out.rois) {
        out.score = std::max(out.score, r.mean_error);
    }
    return out;
}

RoiResult roi_score(const Tensor4& image, const Tensor4& reconstruction, const CameraGeometry& geometry,
                    const SizeBounds& bounds, const RoiConfig& config) {
    return roi_chain(heatmap(image, reconstruction), pixel_bounds(geometry, bounds), config);
}

}  // namespace seavae
