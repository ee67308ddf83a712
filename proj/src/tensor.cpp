#include "smoothcam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "smoothcam/error.hpp"

namespace smoothcam {

std::size_t element_count(const Tensor::Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Tensor::Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::channel(std::size_t c) const {
    if (rank() != 3 || c >= shape_[0]) {
        throw ShapeError("channel " + std::to_string(c) + " out of range for " + shape_string(shape_));
    }
    const std::size_t plane = shape_[1] * shape_[2];
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(c * plane);
    return Tensor({shape_[1], shape_[2]}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

double Tensor::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }

double Tensor::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ConvSpec::validate() const {
    if (kernel_h < 1 || kernel_w < 1) throw ShapeError("convolution kernel extents must be >= 1");
    if (stride_h < 1 || stride_w < 1) throw ShapeError("convolution strides must be >= 1");
    if (in_channels < 1 || out_channels < 1) throw ShapeError("convolution channel counts must be >= 1");
}

namespace {

std::size_t same_total_pad(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride) {
    const std::size_t needed = (out - 1) * stride + kernel;
    return needed > in ? needed - in : 0;
}

}  // namespace

Extent2 conv_output_shape(std::size_t height, std::size_t width, const ConvSpec& spec) {
    spec.validate();
    if (height < 1 || width < 1) throw ShapeError("convolution input extents must be positive");
    if (!spec.padding) {
        return {(height + spec.stride_h - 1) / spec.stride_h, (width + spec.stride_w - 1) / spec.stride_w};
    }
    const std::size_t padded_h = height + 2 * *spec.padding;
    const std::size_t padded_w = width + 2 * *spec.padding;
    if (padded_h < spec.kernel_h || padded_w < spec.kernel_w) {
        std::ostringstream os;
        os << "convolution " << spec.kernel_h << 'x' << spec.kernel_w << " with padding " << *spec.padding
           << " yields a non-positive output extent on a " << height << 'x' << width << " input";
        throw ShapeError(os.str());
    }
    return {(padded_h - spec.kernel_h) / spec.stride_h + 1, (padded_w - spec.kernel_w) / spec.stride_w + 1};
}

PadOffsets conv_padding(std::size_t height, std::size_t width, const ConvSpec& spec) {
    if (spec.padding) return {*spec.padding, *spec.padding};
    const Extent2 out = conv_output_shape(height, width, spec);
    return {same_total_pad(height, out.height, spec.kernel_h, spec.stride_h) / 2,
            same_total_pad(width, out.width, spec.kernel_w, spec.stride_w) / 2};
}

namespace {

void check_conv_operands(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
    spec.validate();
    const Tensor::Shape expected_w{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
    if (weights.shape() != expected_w) {
        throw ShapeError("convolution weights " + shape_string(weights.shape()) + " do not match spec " +
                         shape_string(expected_w));
    }
    if (input.rank() != 3 || input.dim(0) != spec.in_channels) {
        throw ShapeError("convolution input " + shape_string(input.shape()) + " incompatible with weights " +
                         shape_string(weights.shape()));
    }
    if (bias.shape() != Tensor::Shape{spec.out_channels}) {
        throw ShapeError("convolution bias " + shape_string(bias.shape()) + " incompatible with weights " +
                         shape_string(weights.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
    check_conv_operands(input, weights, bias, spec);
    const std::size_t in_h = input.dim(1);
    const std::size_t in_w = input.dim(2);
    const Extent2 out = conv_output_shape(in_h, in_w, spec);
    const PadOffsets pad = conv_padding(in_h, in_w, spec);

    Tensor output({spec.out_channels, out.height, out.width});
    for (std::size_t k = 0; k < spec.out_channels; ++k) {
        for (std::size_t oy = 0; oy < out.height; ++oy) {
            for (std::size_t ox = 0; ox < out.width; ++ox) {
                double acc = bias[k];
                for (std::size_t c = 0; c < spec.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                        // Signed arithmetic: the receptive field may start inside the padding.
                        const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride_h + ky) -
                                        static_cast<std::ptrdiff_t>(pad.top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
                        for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride_w + kx) -
                                            static_cast<std::ptrdiff_t>(pad.left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                            acc += input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                                   weights[((k * spec.in_channels + c) * spec.kernel_h + ky) * spec.kernel_w + kx];
                        }
                    }
                }
                output.at(k, oy, ox) = acc;
            }
        }
    }
    return output;
}

Tensor conv2d_backward_input(const Tensor& grad_output, const Tensor& weights, const ConvSpec& spec,
                             std::size_t in_h, std::size_t in_w) {
    spec.validate();
    const Extent2 out = conv_output_shape(in_h, in_w, spec);
    if (grad_output.shape() != Tensor::Shape{spec.out_channels, out.height, out.width}) {
        throw ShapeError("convolution output gradient " + shape_string(grad_output.shape()) +
                         " does not match forward output " +
                         shape_string({spec.out_channels, out.height, out.width}));
    }
    const PadOffsets pad = conv_padding(in_h, in_w, spec);

    Tensor grad_input({spec.in_channels, in_h, in_w});
    for (std::size_t k = 0; k < spec.out_channels; ++k) {
        for (std::size_t oy = 0; oy < out.height; ++oy) {
            for (std::size_t ox = 0; ox < out.width; ++ox) {
                const double go = grad_output.at(k, oy, ox);
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < spec.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * spec.stride_h + ky) -
                                        static_cast<std::ptrdiff_t>(pad.top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_h)) continue;
                        for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * spec.stride_w + kx) -
                                            static_cast<std::ptrdiff_t>(pad.left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_w)) continue;
                            grad_input.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                                go * weights[((k * spec.in_channels + c) * spec.kernel_h + ky) * spec.kernel_w + kx];
                        }
                    }
                }
            }
        }
    }
    return grad_input;
}

Tensor relu(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.values()) v = std::max(v, 0.0);
    return out;
}

Extent2 pool_output_shape(std::size_t height, std::size_t width, std::size_t window, std::size_t stride) {
    if (window < 1 || stride < 1) throw ShapeError("max-pool window and stride must be >= 1");
    if (window > height || window > width) {
        throw ShapeError("max-pool window " + std::to_string(window) + " larger than input " +
                         std::to_string(height) + 'x' + std::to_string(width));
    }
    return {(height - window) / stride + 1, (width - window) / stride + 1};
}

PoolResult maxpool2d(const Tensor& t, std::size_t window, std::size_t stride) {
    if (t.rank() != 3) throw ShapeError("max-pool expects a [C,H,W] tensor, got " + shape_string(t.shape()));
    const std::size_t channels = t.dim(0);
    const std::size_t in_h = t.dim(1);
    const std::size_t in_w = t.dim(2);
    const Extent2 out = pool_output_shape(in_h, in_w, window, stride);

    PoolResult result{Tensor({channels, out.height, out.width}), {}};
    result.argmax.resize(result.output.size());
    std::size_t o = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t oy = 0; oy < out.height; ++oy) {
            for (std::size_t ox = 0; ox < out.width; ++ox, ++o) {
                std::size_t best = (c * in_h + oy * stride) * in_w + ox * stride;
                for (std::size_t wy = 0; wy < window; ++wy) {
                    for (std::size_t wx = 0; wx < window; ++wx) {
                        const std::size_t idx = (c * in_h + oy * stride + wy) * in_w + ox * stride + wx;
                        // First maximum in scan order wins ties.
                        if (t[idx] > t[best]) best = idx;
                    }
                }
                result.output[o] = t[best];
                result.argmax[o] = best;
            }
        }
    }
    return result;
}

Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    if (weights.rank() != 2 || x.rank() != 1 || weights.dim(1) != x.dim(0)) {
        throw ShapeError("linear weights " + shape_string(weights.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
    }
    const std::size_t rows = weights.dim(0);
    const std::size_t cols = weights.dim(1);
    if (bias.shape() != Tensor::Shape{rows}) {
        throw ShapeError("linear bias " + shape_string(bias.shape()) + " incompatible with weights " +
                         shape_string(weights.shape()));
    }
    Tensor y({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = bias[r];
        for (std::size_t c = 0; c < cols; ++c) acc += weights[r * cols + c] * x[c];
        y[r] = acc;
    }
    return y;
}

Tensor global_avg_pool(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("global average pool expects [C,H,W], got " + shape_string(t.shape()));
    const std::size_t channels = t.dim(0);
    const std::size_t plane = t.dim(1) * t.dim(2);
    Tensor out({channels});
    for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += t[c * plane + i];
        out[c] = acc / static_cast<double>(plane);
    }
    return out;
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

Tap source_tap(std::size_t dst, std::size_t in, std::size_t out) {
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

Tensor bilinear_resize(const Tensor& t, std::size_t height, std::size_t width) {
    if (t.rank() != 2) throw ShapeError("bilinear resize expects [H,W], got " + shape_string(t.shape()));
    if (height < 1 || width < 1) throw ShapeError("bilinear resize target extents must be >= 1");
    const std::size_t in_h = t.dim(0);
    const std::size_t in_w = t.dim(1);
    if (in_h == height && in_w == width) return t;

    std::vector<Tap> cols(width);
    for (std::size_t x = 0; x < width; ++x) cols[x] = source_tap(x, in_w, width);

    Tensor out({height, width});
    for (std::size_t y = 0; y < height; ++y) {
        const Tap r = source_tap(y, in_h, height);
        for (std::size_t x = 0; x < width; ++x) {
            const Tap& c = cols[x];
            const double top = t.at(r.lo, c.lo) + (t.at(r.lo, c.hi) - t.at(r.lo, c.lo)) * c.frac;
            const double bottom = t.at(r.hi, c.lo) + (t.at(r.hi, c.hi) - t.at(r.hi, c.lo)) * c.frac;
            out.at(y, x) = top + (bottom - top) * r.frac;
        }
    }
    return out;
}

}  // namespace smoothcam
