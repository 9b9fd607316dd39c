#include "bsdn/autodiff.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "bsdn/errors.hpp"

namespace bsdn {

namespace detail {

struct Node {
    const char* tag = "leaf";
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw DimensionError(msg);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var

Var Var::leaf(Tensor value, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
}

Var Var::op(const char* tag, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    const bool track =
        g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& in) { return in.requires_grad(); });
    Var v;
    v.node_ = std::make_shared<detail::Node>();
    v.node_->tag = tag;
    v.node_->value = std::move(value);
    if (track) {
        v.node_->requires_grad = true;
        v.node_->inputs = std::move(inputs);
        v.node_->backward = std::move(backward);
    }
    return v;
}

const Tensor& Var::value() const {
    if (!node_) {
        throw UsageError("access to undefined Var");
    }
    return node_->value;
}

Tensor& Var::mutable_value() {
    if (!node_ || !node_->inputs.empty()) {
        throw UsageError("mutable_value() is only available on leaves");
    }
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
bool Var::is_leaf() const { return node_ && node_->inputs.empty(); }
const char* Var::tag() const { return node_ ? node_->tag : "undefined"; }

const Tensor& Var::grad() const {
    if (!node_) {
        throw UsageError("grad() on undefined Var");
    }
    return node_->grad;
}

Tensor& Var::grad_buffer() const {
    if (node_->grad.empty() || node_->grad.shape() != node_->value.shape()) {
        node_->grad = Tensor(node_->value.shape(), 0.0f);
    }
    return node_->grad;
}

void Var::zero_grad() const {
    if (node_ && !node_->grad.empty()) {
        node_->grad.fill(0.0f);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Kernel masks

KernelMask KernelMask::full(int kh, int kw) {
    return KernelMask{kh, kw, std::vector<std::uint8_t>(static_cast<std::size_t>(kh * kw), 1)};
}

KernelMask KernelMask::blind_spot(int kh, int kw) {
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ParameterError("blind-spot mask needs an odd kernel, got " + std::to_string(kh) + "x" +
                             std::to_string(kw));
    }
    KernelMask m = full(kh, kw);
    m.active[static_cast<std::size_t>((kh / 2) * kw + kw / 2)] = 0;
    return m;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
    int n, cin, cout, h, w, kh, kw, dilation;
};

ConvGeometry check_conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, int dilation,
                        const KernelMask* mask) {
    if (dilation < 1) {
        throw ParameterError("conv2d: dilation must be >= 1, got " + std::to_string(dilation));
    }
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    require(ks.c == is.c, "conv2d: kernel expects " + std::to_string(ks.c) + " input channels, input has " +
                              std::to_string(is.c));
    require(ks.h % 2 == 1 && ks.w % 2 == 1, "conv2d: kernel size must be odd, got " + ks.str());
    require(bias.numel() == static_cast<std::size_t>(ks.n),
            "conv2d: bias has " + std::to_string(bias.numel()) + " entries for " + std::to_string(ks.n) +
                " output channels");
    if (mask != nullptr) {
        require(mask->kh == ks.h && mask->kw == ks.w, "conv2d: mask does not match kernel " + ks.str());
    }
    return ConvGeometry{is.n, is.c, ks.n, is.h, is.w, ks.h, ks.w, dilation};
}

// Row/column range of output positions whose tap at offset d stays in bounds.
struct Span1D {
    int lo, hi;
};
inline Span1D valid_range(int extent, int offset) {
    return Span1D{std::max(0, -offset), std::min(extent, extent - offset)};
}

Tensor conv_forward_impl(const Tensor& input, const Tensor& kernel, const Tensor& bias, const ConvGeometry& g,
                         const KernelMask* mask) {
    Tensor out(Shape{g.n, g.cout, g.h, g.w});
    std::vector<double> acc(static_cast<std::size_t>(g.h) * g.w);
    const int ch = g.kh / 2;
    const int cw = g.kw / 2;
    for (int n = 0; n < g.n; ++n) {
        for (int co = 0; co < g.cout; ++co) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(bias.raw()[co]));
            for (int ci = 0; ci < g.cin; ++ci) {
                const float* src = input.plane(n, ci);
                const float* taps = kernel.plane(co, ci);
                for (int i = 0; i < g.kh; ++i) {
                    const int dy = g.dilation * (i - ch);
                    const Span1D ys = valid_range(g.h, dy);
                    for (int j = 0; j < g.kw; ++j) {
                        if (mask != nullptr && !(*mask)(i, j)) {
                            continue;
                        }
                        const int dx = g.dilation * (j - cw);
                        const Span1D xs = valid_range(g.w, dx);
                        if (ys.lo >= ys.hi || xs.lo >= xs.hi) {
                            continue;
                        }
                        const double wv = taps[i * g.kw + j];
                        for (int y = ys.lo; y < ys.hi; ++y) {
                            const float* s = src + static_cast<std::ptrdiff_t>(y + dy) * g.w + dx;
                            double* d = acc.data() + static_cast<std::ptrdiff_t>(y) * g.w;
                            for (int x = xs.lo; x < xs.hi; ++x) {
                                d[x] += wv * static_cast<double>(s[x]);
                            }
                        }
                    }
                }
            }
            float* dst = out.plane(n, co);
            for (std::size_t p = 0; p < acc.size(); ++p) {
                dst[p] = static_cast<float>(acc[p]);
            }
        }
    }
    return out;
}

void conv_backward_input(const Tensor& grad_out, const Tensor& kernel, const ConvGeometry& g, const KernelMask* mask,
                         Tensor& grad_in) {
    std::vector<double> acc(static_cast<std::size_t>(g.h) * g.w);
    const int ch = g.kh / 2;
    const int cw = g.kw / 2;
    for (int n = 0; n < g.n; ++n) {
        for (int ci = 0; ci < g.cin; ++ci) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int co = 0; co < g.cout; ++co) {
                const float* go = grad_out.plane(n, co);
                const float* taps = kernel.plane(co, ci);
                for (int i = 0; i < g.kh; ++i) {
                    const int dy = g.dilation * (i - ch);
                    const Span1D ys = valid_range(g.h, dy);
                    for (int j = 0; j < g.kw; ++j) {
                        if (mask != nullptr && !(*mask)(i, j)) {
                            continue;
                        }
                        const int dx = g.dilation * (j - cw);
                        const Span1D xs = valid_range(g.w, dx);
                        if (ys.lo >= ys.hi || xs.lo >= xs.hi) {
                            continue;
                        }
                        const double wv = taps[i * g.kw + j];
                        for (int y = ys.lo; y < ys.hi; ++y) {
                            const float* s = go + static_cast<std::ptrdiff_t>(y) * g.w;
                            double* d = acc.data() + static_cast<std::ptrdiff_t>(y + dy) * g.w + dx;
                            for (int x = xs.lo; x < xs.hi; ++x) {
                                d[x] += wv * static_cast<double>(s[x]);
                            }
                        }
                    }
                }
            }
            float* dst = grad_in.plane(n, ci);
            for (std::size_t p = 0; p < acc.size(); ++p) {
                dst[p] += static_cast<float>(acc[p]);
            }
        }
    }
}

void conv_backward_kernel(const Tensor& grad_out, const Tensor& input, const ConvGeometry& g, const KernelMask* mask,
                          Tensor& grad_kernel) {
    // Per-column partial sums keep the reduction vectorizable and order-fixed.
    std::vector<double> row(static_cast<std::size_t>(g.w));
    const int ch = g.kh / 2;
    const int cw = g.kw / 2;
    for (int co = 0; co < g.cout; ++co) {
        for (int ci = 0; ci < g.cin; ++ci) {
            float* gk = grad_kernel.plane(co, ci);
            for (int i = 0; i < g.kh; ++i) {
                const int dy = g.dilation * (i - ch);
                const Span1D ys = valid_range(g.h, dy);
                for (int j = 0; j < g.kw; ++j) {
                    if (mask != nullptr && !(*mask)(i, j)) {
                        continue;
                    }
                    const int dx = g.dilation * (j - cw);
                    const Span1D xs = valid_range(g.w, dx);
                    if (ys.lo >= ys.hi || xs.lo >= xs.hi) {
                        continue;
                    }
                    std::fill(row.begin(), row.end(), 0.0);
                    for (int n = 0; n < g.n; ++n) {
                        const float* go = grad_out.plane(n, co);
                        const float* src = input.plane(n, ci);
                        for (int y = ys.lo; y < ys.hi; ++y) {
                            const float* a = go + static_cast<std::ptrdiff_t>(y) * g.w;
                            const float* b = src + static_cast<std::ptrdiff_t>(y + dy) * g.w + dx;
                            for (int x = xs.lo; x < xs.hi; ++x) {
                                row[static_cast<std::size_t>(x)] +=
                                    static_cast<double>(a[x]) * static_cast<double>(b[x]);
                            }
                        }
                    }
                    double total = 0.0;
                    for (double r : row) {
                        total += r;
                    }
                    gk[i * g.kw + j] += static_cast<float>(total);
                }
            }
        }
    }
}

void conv_backward_bias(const Tensor& grad_out, const ConvGeometry& g, Tensor& grad_bias) {
    for (int co = 0; co < g.cout; ++co) {
        double total = 0.0;
        for (int n = 0; n < g.n; ++n) {
            const float* go = grad_out.plane(n, co);
            for (std::size_t p = 0; p < grad_out.shape().plane(); ++p) {
                total += go[p];
            }
        }
        grad_bias.raw()[co] += static_cast<float>(total);
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias, int dilation,
                      const KernelMask* mask) {
    const ConvGeometry g = check_conv(input, kernel, bias, dilation, mask);
    return conv_forward_impl(input, kernel, bias, g, mask);
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int dilation, const std::optional<KernelMask>& mask) {
    const KernelMask* mp = mask ? &*mask : nullptr;
    const ConvGeometry g = check_conv(input.value(), kernel.value(), bias.value(), dilation, mp);
    Tensor out = conv_forward_impl(input.value(), kernel.value(), bias.value(), g, mp);
    return Var::op("conv2d", std::move(out), {input, kernel, bias},
                   [g, mask](const Tensor& grad_out, std::span<const Var> in) {
                       const KernelMask* m = mask ? &*mask : nullptr;
                       if (in[0].requires_grad()) {
                           conv_backward_input(grad_out, in[1].value(), g, m, in[0].grad_buffer());
                       }
                       if (in[1].requires_grad()) {
                           conv_backward_kernel(grad_out, in[0].value(), g, m, in[1].grad_buffer());
                       }
                       if (in[2].requires_grad()) {
                           conv_backward_bias(grad_out, g, in[2].grad_buffer());
                       }
                   });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

Var add(const Var& a, const Var& b) {
    require(a.shape() == b.shape(), "add: " + a.shape().str() + " vs " + b.shape().str());
    Tensor out = a.value();
    out.add_(b.value());
    return Var::op("add", std::move(out), {a, b}, [](const Tensor& g, std::span<const Var> in) {
        for (const Var& v : in) {
            if (v.requires_grad()) {
                v.grad_buffer().add_(g);
            }
        }
    });
}

Var leaky_relu(const Var& a, float slope) {
    Tensor out = a.value();
    for (float& v : out.data()) {
        v = v > 0.0f ? v : v * slope;
    }
    return Var::op("leaky_relu", std::move(out), {a}, [slope](const Tensor& g, std::span<const Var> in) {
        if (!in[0].requires_grad()) {
            return;
        }
        const auto x = in[0].value().data();
        auto gi = in[0].grad_buffer().data();
        const auto go = g.data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            gi[i] += x[i] > 0.0f ? go[i] : go[i] * slope;
        }
    });
}

Var concat_channels(std::span<const Var> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    Shape s = parts.front().shape();
    int channels = 0;
    for (const Var& p : parts) {
        const Shape& t = p.shape();
        require(t.n == s.n && t.h == s.h && t.w == s.w, "concat_channels: " + t.str() + " vs " + s.str());
        channels += t.c;
    }
    s.c = channels;
    Tensor out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n) {
        int offset = 0;
        for (const Var& p : parts) {
            const Tensor& v = p.value();
            std::copy_n(v.plane(n, 0), static_cast<std::size_t>(v.shape().c) * plane, out.plane(n, offset));
            offset += v.shape().c;
        }
    }
    return Var::op("concat_channels", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [](const Tensor& g, std::span<const Var> in) {
                       const std::size_t plane = g.shape().plane();
                       for (int n = 0; n < g.shape().n; ++n) {
                           int offset = 0;
                           for (const Var& p : in) {
                               const int c = p.shape().c;
                               if (p.requires_grad()) {
                                   const float* src = g.plane(n, offset);
                                   float* dst = p.grad_buffer().plane(n, 0);
                                   for (std::size_t i = 0; i < static_cast<std::size_t>(c) * plane; ++i) {
                                       dst[i] += src[i];
                                   }
                               }
                               offset += c;
                           }
                       }
                   });
}

Var slice_channels(const Var& a, int first, int count) {
    const Shape& as = a.shape();
    require(first >= 0 && count >= 1 && first + count <= as.c,
            "slice_channels: [" + std::to_string(first) + ", +" + std::to_string(count) + ") outside " + as.str());
    Shape s = as;
    s.c = count;
    Tensor out(s);
    const std::size_t len = static_cast<std::size_t>(count) * s.plane();
    for (int n = 0; n < s.n; ++n) {
        std::copy_n(a.value().plane(n, first), len, out.plane(n, 0));
    }
    return Var::op("slice_channels", std::move(out), {a}, [first, count](const Tensor& g, std::span<const Var> in) {
        if (!in[0].requires_grad()) {
            return;
        }
        Tensor& gi = in[0].grad_buffer();
        const std::size_t len = static_cast<std::size_t>(count) * g.shape().plane();
        for (int n = 0; n < g.shape().n; ++n) {
            const float* src = g.plane(n, 0);
            float* dst = gi.plane(n, first);
            for (std::size_t i = 0; i < len; ++i) {
                dst[i] += src[i];
            }
        }
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (float v : a.value().data()) {
        total += v;
    }
    return Var::op("sum", Tensor::scalar(static_cast<float>(total)), {a},
                   [](const Tensor& g, std::span<const Var> in) {
                       if (!in[0].requires_grad()) {
                           return;
                       }
                       const float gv = g.item();
                       for (float& v : in[0].grad_buffer().data()) {
                           v += gv;
                       }
                   });
}

Var weighted_sum(const Var& a, const Tensor& weights) {
    require(a.shape() == weights.shape(), "weighted_sum: " + a.shape().str() + " vs " + weights.shape().str());
    double total = 0.0;
    const auto x = a.value().data();
    const auto w = weights.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += static_cast<double>(x[i]) * static_cast<double>(w[i]);
    }
    return Var::op("weighted_sum", Tensor::scalar(static_cast<float>(total)), {a},
                   [weights](const Tensor& g, std::span<const Var> in) {
                       if (!in[0].requires_grad()) {
                           return;
                       }
                       const float gv = g.item();
                       auto gi = in[0].grad_buffer().data();
                       const auto w = weights.data();
                       for (std::size_t i = 0; i < gi.size(); ++i) {
                           gi[i] += gv * w[i];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Var& root) {
    if (!root.defined() || root.value().numel() != 1) {
        throw UsageError("backward: root must be a scalar, got shape " +
                         (root.defined() ? root.shape().str() : std::string("undefined")));
    }
    if (!root.requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node_.get(), 0);
    visited.insert(root.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].node_.get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (detail::Node* node : order) {
        if (!node->inputs.empty()) {
            node->grad = Tensor();
        }
    }
    root.grad_buffer().raw()[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->inputs.empty() || node->grad.empty()) {
            continue;
        }
        node->backward(node->grad, node->inputs);
    }
}

}  // namespace bsdn
