#include "bsdn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "bsdn/errors.hpp"

namespace bsdn {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
           "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw DimensionError("negative tensor extent " + shape.str());
    }
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
    }
}

float Tensor::item() const {
    if (data_.size() != 1) {
        throw UsageError("item() on tensor of shape " + shape_.str());
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::add_(const Tensor& other) {
    if (other.shape_ != shape_) {
        throw DimensionError("add_: " + shape_.str() + " vs " + other.shape_.str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::batch_slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n) {
        throw DimensionError("batch_slice out of range for " + shape_.str());
    }
    Shape s = shape_;
    s.n = count;
    const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
    std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                           data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    return Tensor(s, std::move(out));
}

Tensor stack_batch(std::span<const Tensor> images) {
    if (images.empty()) {
        throw DimensionError("stack_batch: no images");
    }
    Shape s = images.front().shape();
    int total = 0;
    for (const auto& img : images) {
        const Shape& t = img.shape();
        if (t.c != s.c || t.h != s.h || t.w != s.w) {
            throw DimensionError("stack_batch: " + t.str() + " vs " + s.str());
        }
        total += t.n;
    }
    s.n = total;
    std::vector<float> out;
    out.reserve(s.numel());
    for (const auto& img : images) {
        out.insert(out.end(), img.data().begin(), img.data().end());
    }
    return Tensor(s, std::move(out));
}

}  // namespace bsdn
