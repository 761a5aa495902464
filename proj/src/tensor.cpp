#include "seavae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace seavae {

std::string Shape4::str() const { return fmt::format("{}x{}x{}x{}", n, c, h, w); }

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape), data_(shape.count(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
        throw ShapeError(fmt::format("tensor data length {} does not match shape {}", data_.size(), shape_.str()));
    }
}

std::span<double> Tensor4::item(std::size_t n) {
    return std::span<double>(data_).subspan(n * shape_.per_item(), shape_.per_item());
}

std::span<const double> Tensor4::item(std::size_t n) const {
    return std::span<const double>(data_).subspan(n * shape_.per_item(), shape_.per_item());
}

Tensor4 Tensor4::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > shape_.n) {
        throw ShapeError(fmt::format("slice [{}, {}) out of range for {}", begin, end, shape_.str()));
    }
    Shape4 s = shape_;
    s.n = end - begin;
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(begin * shape_.per_item());
    auto last = data_.begin() + static_cast<std::ptrdiff_t>(end * shape_.per_item());
    return Tensor4(s, std::vector<double>(first, last));
}

Tensor4 Tensor4::reshaped(Shape4 shape) const {
    if (shape.count() != shape_.count()) {
        throw ShapeError(fmt::format("cannot reshape {} to {}", shape_.str(), shape.str()));
    }
    return Tensor4(shape, data_);
}

bool Tensor4::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor4 stack(std::span<const Tensor4> items) {
    if (items.empty()) {
        return {};
    }
    Shape4 s = items.front().shape();
    std::size_t total = 0;
    for (const auto& t : items) {
        const auto& ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
            throw ShapeError(fmt::format("cannot stack {} with {}", ts.str(), s.str()));
        }
        total += ts.n;
    }
    s.n = total;
    std::vector<double> data;
    data.reserve(s.count());
    for (const auto& t : items) {
        data.insert(data.end(), t.storage().begin(), t.storage().end());
    }
    return Tensor4(s, std::move(data));
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError(fmt::format("dot of lengths {} and {}", a.size(), b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

}  // namespace seavae
