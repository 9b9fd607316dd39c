#pragma once

// Reverse-mode automatic differentiation over NCHW tensors.
//
// A Var is a shared handle to a tape node. Operations record their inputs and a
// backward closure; backward(root) walks the recorded graph in reverse
// topological order. Leaf gradients accumulate across calls until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdn/tensor.hpp"

namespace bsdn {

class Var;

namespace detail {
struct Node;
}

/// Backward closure: receives d(root)/d(output) and the op's inputs, and
/// accumulates into the inputs that require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<const Var> inputs)>;

class Var {
public:
    Var() = default;

    /// Leaf node (parameter, input image, constant).
    static Var leaf(Tensor value, bool requires_grad = false);

    /// Interior node. Inputs that do not require a gradient are still kept so
    /// the closure can read their values.
    static Var op(const char* tag, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    /// Leaves only: in-place parameter updates.
    Tensor& mutable_value();

    bool requires_grad() const;
    bool is_leaf() const;
    const char* tag() const;

    /// Gradient accumulated by backward; an empty tensor if none was produced.
    const Tensor& grad() const;
    /// Gradient buffer, allocated as zeros on first use.
    Tensor& grad_buffer() const;
    void zero_grad() const;

    friend bool operator==(const Var& a, const Var& b) noexcept { return a.node_ == b.node_; }

private:
    friend void backward(const Var& root);
    std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording in its scope: ops produce leaves without history.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

/// Boolean tap map of a convolution kernel; true = tap contributes.
struct KernelMask {
    int kh = 0;
    int kw = 0;
    std::vector<std::uint8_t> active;

    static KernelMask full(int kh, int kw);
    /// All taps active except the center (kh, kw odd).
    static KernelMask blind_spot(int kh, int kw);

    bool operator()(int i, int j) const noexcept { return active[static_cast<std::size_t>(i * kw + j)] != 0; }
};

/// "Same" zero-padded dilated convolution, stride 1.
/// kernel: [Cout, Cin, kh, kw], bias: [1, Cout, 1, 1]. Masked taps are skipped
/// in both passes, so their kernel entries never receive gradient.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int dilation,
           const std::optional<KernelMask>& mask = std::nullopt);

/// Forward-only convolution on plain tensors (same semantics as conv2d).
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, int dilation,
                      const KernelMask* mask = nullptr);

Var add(const Var& a, const Var& b);
Var leaky_relu(const Var& a, float slope);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int first, int count);
Var sum(const Var& a);
/// Scalar Σ a·weights with a constant weight tensor of the same shape.
Var weighted_sum(const Var& a, const Tensor& weights);

/// Reverse pass from a scalar root. Throws UsageError if the root has more than one element.
void backward(const Var& root);

}  // namespace bsdn
