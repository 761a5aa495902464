#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seavae {

/// Raised when tensor or parameter shapes disagree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Shape4 {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    [[nodiscard]] std::size_t count() const { return n * c * h * w; }
    [[nodiscard]] std::size_t per_item() const { return c * h * w; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense NCHW tensor in row-major order.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, double fill = 0.0);
    Tensor4(Shape4 shape, std::vector<double> data);

    [[nodiscard]] const Shape4& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::vector<double>& storage() { return data_; }
    [[nodiscard]] const std::vector<double>& storage() const { return data_; }

    [[nodiscard]] std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
    [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(n, c, h, w)];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// View of one batch item as a contiguous C*H*W span.
    [[nodiscard]] std::span<double> item(std::size_t n);
    [[nodiscard]] std::span<const double> item(std::size_t n) const;

    /// Copy of a contiguous range of batch items.
    [[nodiscard]] Tensor4 slice(std::size_t begin, std::size_t end) const;
    /// Same data, new shape with identical element count.
    [[nodiscard]] Tensor4 reshaped(Shape4 shape) const;

    [[nodiscard]] bool all_finite() const;

private:
    Shape4 shape_{};
    std::vector<double> data_;
};

/// Stack single-item tensors of identical shape along the batch axis.
Tensor4 stack(std::span<const Tensor4> items);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace seavae
