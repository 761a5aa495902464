#include "seavae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace seavae {

namespace {

Tensor4 from_mat(const cv::Mat& decoded, std::size_t height, std::size_t width, const std::string& what) {
    if (decoded.empty()) {
        throw ImageError(fmt::format("cannot decode image {}", what));
    }
    if (decoded.depth() != CV_8U) {
        throw ImageError(fmt::format("image {} is not 8-bit", what));
    }
    cv::Mat rgb;
    switch (decoded.channels()) {
        case 1: cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw ImageError(fmt::format("image {} has {} channels", what, decoded.channels()));
    }
    if (static_cast<std::size_t>(rgb.rows) != height || static_cast<std::size_t>(rgb.cols) != width) {
        cv::Mat resized;
        cv::resize(rgb, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_AREA);
        rgb = resized;
    }
    Tensor4 out({1, 3, height, width});
    for (std::size_t r = 0; r < height; ++r) {
        const auto* row = rgb.ptr<cv::Vec3b>(static_cast<int>(r));
        for (std::size_t c = 0; c < width; ++c) {
            for (std::size_t ch = 0; ch < 3; ++ch) {
                out.at(0, ch, r, c) = static_cast<double>(row[c][static_cast<int>(ch)]) / 255.0;
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> png_bytes(const cv::Mat& mat) {
    std::vector<std::uint8_t> buf;
    // fixed compression so the bytes only depend on the pixels
    if (!cv::imencode(".png", mat, buf, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
        throw ImageError("PNG encoding failed");
    }
    return buf;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensor4 load_image(const std::filesystem::path& path, std::size_t height, std::size_t width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageError(fmt::format("cannot open image {}", path.string()));
    }
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    return from_mat(bytes.empty() ? cv::Mat() : cv::imdecode(raw, cv::IMREAD_UNCHANGED), height, width,
                    path.string());
}

Tensor4 decode_image(std::span<const std::uint8_t> bytes, std::size_t height, std::size_t width) {
    const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    return from_mat(bytes.empty() ? cv::Mat() : cv::imdecode(raw, cv::IMREAD_UNCHANGED), height, width,
                    "from memory");
}

std::vector<std::uint8_t> encode_png(const Tensor4& image) {
    const auto& s = image.shape();
    if (s.n != 1 || s.c != 3) {
        throw ShapeError(fmt::format("encode_png needs a 1x3xHxW image, got {}", s.str()));
    }
    cv::Mat bgr(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
    for (std::size_t r = 0; r < s.h; ++r) {
        auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(r));
        for (std::size_t c = 0; c < s.w; ++c) {
            row[c] = cv::Vec3b(to_byte(image.at(0, 2, r, c)), to_byte(image.at(0, 1, r, c)),
                               to_byte(image.at(0, 0, r, c)));
        }
    }
    return png_bytes(bgr);
}

void write_png(const std::filesystem::path& path, const Tensor4& image) {
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ImageError(fmt::format("cannot write {}", path.string()));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> encode_heatmap_png(const Heatmap& map) {
    cv::Mat gray(static_cast<int>(map.height), static_cast<int>(map.width), CV_8U);
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double span = map.values.empty() ? 0.0 : *hi - *lo;
    for (std::size_t r = 0; r < map.height; ++r) {
        for (std::size_t c = 0; c < map.width; ++c) {
            gray.at<std::uint8_t>(static_cast<int>(r), static_cast<int>(c)) =
                span > 0.0 ? to_byte((map.at(r, c) - *lo) / span) : 0;
        }
    }
    return png_bytes(gray);
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
    cv::Mat gray(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8U);
    for (std::size_t r = 0; r < mask.height; ++r) {
        for (std::size_t c = 0; c < mask.width; ++c) {
            gray.at<std::uint8_t>(static_cast<int>(r), static_cast<int>(c)) = mask.at(r, c) ? 255 : 0;
        }
    }
    return png_bytes(gray);
}

void quantize_8bit(Tensor4& image) {
    for (double& v : image.storage()) {
        v = static_cast<double>(to_byte(v)) / 255.0;
    }
}

}  // namespace seavae
