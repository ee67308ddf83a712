#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace smoothcam {

/// Dense row-major tensor of doubles. Layouts are channels-first: images and
/// activations are [C, H, W], saliency maps [H, W], vectors [N].
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    /// View of channel c of a rank-3 tensor as an [H, W] copy.
    Tensor channel(std::size_t c) const;

    Tensor reshaped(Shape shape) const;

    double max() const;
    double min() const;
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_string(const Tensor::Shape& shape);
std::size_t element_count(const Tensor::Shape& shape);

/// Convolution hyperparameters. `padding` empty selects SAME mode, where the
/// output extent is ceil(H / stride) and the zero padding is split as evenly
/// as possible (extra row/column at the bottom/right).
struct ConvSpec {
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::optional<std::size_t> padding = 0;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    void validate() const;
};

struct Extent2 {
    std::size_t height;
    std::size_t width;
    friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// Leading zero padding actually applied on each axis (top, left).
struct PadOffsets {
    std::size_t top;
    std::size_t left;
};

Extent2 conv_output_shape(std::size_t height, std::size_t width, const ConvSpec& spec);
PadOffsets conv_padding(std::size_t height, std::size_t width, const ConvSpec& spec);

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

/// Input gradient of conv2d: given dL/d(output), returns dL/d(input).
Tensor conv2d_backward_input(const Tensor& grad_output, const Tensor& weights, const ConvSpec& spec,
                             std::size_t in_height, std::size_t in_width);

Tensor relu(const Tensor& t);

struct PoolResult {
    Tensor output;
    /// Flat index into the input for every output element.
    std::vector<std::size_t> argmax;
};

Extent2 pool_output_shape(std::size_t height, std::size_t width, std::size_t window, std::size_t stride);
PoolResult maxpool2d(const Tensor& t, std::size_t window, std::size_t stride);

Tensor linear(const Tensor& x, const Tensor& weights, const Tensor& bias);
Tensor global_avg_pool(const Tensor& t);

/// Half-pixel-centre bilinear interpolation (align_corners = false), with
/// source coordinates clamped to the image border.
Tensor bilinear_resize(const Tensor& t, std::size_t height, std::size_t width);

}  // namespace smoothcam
