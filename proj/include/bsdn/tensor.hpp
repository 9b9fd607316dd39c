#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bsdn {

/// (batch, channels, height, width)
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

    std::array<int, 4> dims() const noexcept { return {n, c, h, w}; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW float32 tensor with contiguous row-major storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* raw() noexcept { return data_.data(); }
    const float* raw() const noexcept { return data_.data(); }

    std::size_t index(int n, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    float& at(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

    /// Pointer to the (n, c) plane.
    float* plane(int n, int c) noexcept { return data_.data() + index(n, c, 0, 0); }
    const float* plane(int n, int c) const noexcept { return data_.data() + index(n, c, 0, 0); }

    float item() const;
    bool all_finite() const noexcept;

    /// Elementwise in-place accumulation; shapes must match.
    void add_(const Tensor& other);
    void fill(float v);

    /// Copy of batch entries [first, first + count).
    Tensor batch_slice(int first, int count) const;

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_{};
    std::vector<float> data_;
};

/// Stack single-image tensors (N = 1 each) along the batch axis.
Tensor stack_batch(std::span<const Tensor> images);

}  // namespace bsdn
