#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "seavae/roi.hpp"
#include "seavae/tensor.hpp"

namespace seavae {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decodes an 8-bit image, converts to RGB, resizes to height x width (area
/// interpolation) and scales to [0, 1]. Returns a 1 x 3 x H x W tensor.
Tensor4 load_image(const std::filesystem::path& path, std::size_t height, std::size_t width);
Tensor4 decode_image(std::span<const std::uint8_t> bytes, std::size_t height, std::size_t width);

/// 8-bit RGB PNG of a single [0, 1] image (values are clamped and rounded).
std::vector<std::uint8_t> encode_png(const Tensor4& image);
void write_png(const std::filesystem::path& path, const Tensor4& image);

/// Visualization only: min-max normalized grayscale PNG.
std::vector<std::uint8_t> encode_heatmap_png(const Heatmap& map);
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);

/// Rounds every value to the nearest 1/255 step, as a PNG round trip would.
void quantize_8bit(Tensor4& image);

}  // namespace seavae
