#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seavae/tensor.hpp"

namespace seavae {

/// Per-pixel anomaly values, row-major H x W.
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Heatmap() = default;
    Heatmap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

    double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// Binary mask, row-major, entries 0 or 1.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
    [[nodiscard]] std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
    [[nodiscard]] std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

/// Channel-summed squared difference. Both tensors must hold exactly one image of the same shape.
Heatmap heatmap(const Tensor4& image, const Tensor4& reconstruction);
Heatmap heatmap(std::span<const double> image, std::span<const double> reconstruction, std::size_t channels,
                std::size_t height, std::size_t width);

/// Median over a kernel x kernel window; borders reflect without repeating the edge pixel.
Heatmap median_blur(const Heatmap& map, std::size_t kernel);

/// mask = map > threshold.
Mask binarize(const Heatmap& map, double threshold);

enum class MorphOp { Erode, Dilate };

/// Square structuring element. Pixels outside the image are ignored, so the
/// border neither erodes nor dilates anything by itself.
Mask morph(const Mask& mask, MorphOp op, std::size_t kernel, std::size_t iterations = 1);
Mask opening(const Mask& mask, std::size_t kernel, std::size_t iterations = 1);

struct Pixel {
    int row = 0;
    int col = 0;
    bool operator==(const Pixel&) const = default;
};

struct BoundingBox {
    int row0 = 0;
    int col0 = 0;
    int row1 = 0;  // inclusive
    int col1 = 0;
};

struct Roi {
    /// Outer boundary traced clockwise from the first pixel in raster order; closed (last is adjacent to first).
    std::vector<Pixel> contour;
    std::size_t area_px = 0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    double mean_error = 0.0;
    BoundingBox bbox;
};

/// 8-connected component labels in raster discovery order; -1 for background.
std::vector<int> label_components(const Mask& mask, std::size_t* count = nullptr);

/// Moore-neighbour trace of the outer boundary of the component containing `start`,
/// which must be that component's first pixel in raster order.
std::vector<Pixel> trace_contour(const Mask& mask, Pixel start);

struct PixelBounds {
    double min_px = 0.0;
    double max_px = 0.0;
};

/// Components whose pixel count lies in [min_px, max_px]; mean_error averages `map` over the component.
std::vector<Roi> extract_rois(const Mask& mask, const Heatmap& map, const PixelBounds& bounds);

struct CameraGeometry {
    double fov_h_deg = 60.0;
    double fov_v_deg = 48.0;
    double altitude_m = 2.0;
    std::size_t width_px = 80;
    std::size_t height_px = 64;
    void validate() const;
};

struct SizeBounds {
    double min_side_m = 0.3;
    double max_side_m = 0.3;
    double margin = 2.0;
    void validate() const;
};

struct Footprint {
    double width_m = 0.0;
    double height_m = 0.0;
    double pixels_per_metre = 0.0;
};

Footprint ground_footprint(const CameraGeometry& geometry);

/// Pixel-area bounds for objects of the configured physical size seen from the camera.
PixelBounds pixel_bounds(const CameraGeometry& geometry, const SizeBounds& bounds);

struct RoiConfig {
    std::size_t median_kernel = 5;
    std::size_t morph_kernel = 3;
    std::size_t morph_iterations = 1;
    /// Adaptive threshold: mean + sigmas * std of the blurred map, never below `threshold_floor`.
    double threshold_sigmas = 3.0;
    double threshold_floor = 0.05;
    void validate() const;
};

double adaptive_threshold(const Heatmap& blurred, const RoiConfig& config);

struct RoiResult {
    double score = 0.0;
    double threshold = 0.0;
    std::vector<Roi> rois;
    Mask mask;
};

/// blur -> binarize -> opening -> extract_rois on an existing heatmap.
RoiResult roi_chain(const Heatmap& map, const PixelBounds& bounds, const RoiConfig& config);

/// Max mean_error over surviving regions, or 0 when none survive.
RoiResult roi_score(const Tensor4& image, const Tensor4& reconstruction, const CameraGeometry& geometry,
                    const SizeBounds& bounds, const RoiConfig& config = {});

}  // namespace seavae
