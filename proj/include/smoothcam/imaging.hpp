#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "smoothcam/model.hpp"
#include "smoothcam/tensor.hpp"

namespace smoothcam {

/// 8-bit RGB image, samples interleaved row-major.
struct RgbImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> samples;

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w) : height(h), width(w), samples(3 * h * w, 0) {}

    std::array<std::uint8_t, 3> pixel(std::size_t y, std::size_t x) const {
        const std::size_t i = 3 * (y * width + x);
        return {samples[i], samples[i + 1], samples[i + 2]};
    }
    void set_pixel(std::size_t y, std::size_t x, std::array<std::uint8_t, 3> rgb) {
        const std::size_t i = 3 * (y * width + x);
        samples[i] = rgb[0];
        samples[i + 1] = rgb[1];
        samples[i + 2] = rgb[2];
    }

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Model input tensor: bilinear resize to the spec extents, samples scaled to
/// [0,1], then (x - mean[c]) / std[c], channels-first. Single-channel models
/// receive the mean of R, G and B.
Tensor preprocess(const RgbImage& img, const InputSpec& spec);

/// Bilinear resize of each colour plane, rounded back to 8 bits.
RgbImage resize_image(const RgbImage& img, std::size_t height, std::size_t width);

/// Colormap breakpoints:
///   0.00 -> (0,0,255) blue     0.25 -> (0,255,255) cyan
///   0.50 -> (0,255,0) green    0.75 -> (255,255,0) yellow
///   1.00 -> (255,0,0) red
/// Channels are interpolated linearly between breakpoints and rounded.
std::array<std::uint8_t, 3> heat_color(double value);

/// Applies heat_color to an [H,W] map with values in [0,1].
RgbImage render_heatmap(const Tensor& map);

inline constexpr double default_overlay_alpha = 0.5;

/// Per sample round(alpha * heat + (1 - alpha) * base).
RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha = default_overlay_alpha);

/// Reads an 8-bit PNG (RGB, RGBA, grayscale, grayscale+alpha or palette).
/// Grayscale is replicated into R, G and B; alpha is discarded. 16-bit
/// images are rejected.
RgbImage decode_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG with fixed encoder settings, so equal images give
/// byte-identical files.
void encode_png(const RgbImage& img, const std::filesystem::path& path);

}  // namespace smoothcam
