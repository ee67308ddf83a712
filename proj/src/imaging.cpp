#include "smoothcam/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include <fmt/format.h>
#include <png.h>

namespace smoothcam {

namespace {

Tensor plane_of(const RgbImage& img, std::size_t channel) {
    Tensor plane({img.height, img.width});
    for (std::size_t i = 0; i < img.height * img.width; ++i) plane[i] = img.samples[3 * i + channel];
    return plane;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

Tensor preprocess(const RgbImage& img, const InputSpec& spec) {
    if (img.height == 0 || img.width == 0) throw ImageError("cannot preprocess an empty image");
    if (spec.channels != 1 && spec.channels != 3) {
        throw ShapeError(fmt::format("preprocessing supports 1 or 3 input channels, model declares {}",
                                     spec.channels));
    }
    std::array<Tensor, 3> planes;
    for (std::size_t c = 0; c < 3; ++c) planes[c] = bilinear_resize(plane_of(img, c), spec.height, spec.width);

    const std::size_t plane = spec.height * spec.width;
    Tensor out({spec.channels, spec.height, spec.width});
    for (std::size_t c = 0; c < spec.channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            double v = spec.channels == 3 ? planes[c][i] : (planes[0][i] + planes[1][i] + planes[2][i]) / 3.0;
            v /= 255.0;
            out[c * plane + i] = (v - spec.mean[c]) / spec.std[c];
        }
    }
    return out;
}

RgbImage resize_image(const RgbImage& img, std::size_t height, std::size_t width) {
    if (img.height == height && img.width == width) return img;
    RgbImage out(height, width);
    for (std::size_t c = 0; c < 3; ++c) {
        const Tensor resized = bilinear_resize(plane_of(img, c), height, width);
        for (std::size_t i = 0; i < height * width; ++i) out.samples[3 * i + c] = to_byte(resized[i]);
    }
    return out;
}

std::array<std::uint8_t, 3> heat_color(double value) {
    static constexpr std::array<std::array<double, 3>, 5> stops{{
        {0, 0, 255},
        {0, 255, 255},
        {0, 255, 0},
        {255, 255, 0},
        {255, 0, 0},
    }};
    const double v = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
    const double pos = v * 4.0;
    const std::size_t seg = std::min<std::size_t>(static_cast<std::size_t>(pos), 3);
    const double t = pos - static_cast<double>(seg);
    std::array<std::uint8_t, 3> rgb{};
    for (std::size_t c = 0; c < 3; ++c) rgb[c] = to_byte(stops[seg][c] + (stops[seg + 1][c] - stops[seg][c]) * t);
    return rgb;
}

RgbImage render_heatmap(const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("heatmap rendering expects an [H,W] map, got " + shape_string(map.shape()));
    RgbImage out(map.dim(0), map.dim(1));
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) out.set_pixel(y, x, heat_color(map.at(y, x)));
    }
    return out;
}

RgbImage overlay(const RgbImage& base, const RgbImage& heat, double alpha) {
    if (base.height != heat.height || base.width != heat.width) {
        throw ShapeError(fmt::format("overlay extents differ: base {}x{}, heat {}x{}", base.height, base.width,
                                     heat.height, heat.width));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ShapeError(fmt::format("overlay alpha {} outside [0,1]", alpha));
    RgbImage out(base.height, base.width);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = to_byte(alpha * heat.samples[i] + (1.0 - alpha) * base.samples[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PNG codec

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
    auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
    if (buffer) *buffer = message;
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

RgbImage decode_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw ImageError(fmt::format("cannot open image '{}'", path.string()));
    png_byte signature[8];
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw ImageError(fmt::format("'{}' is not a PNG file", path.string()));
    }

    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
    if (!png) throw ImageError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageError("libpng initialisation failed");
    }

    RgbImage img;
    std::vector<png_bytep> rows;
    std::string failure;
    // Objects with destructors live outside the setjmp scope.
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError(fmt::format("malformed PNG '{}': {}", path.string(), failure.empty() ? message : failure));
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte depth = png_get_bit_depth(png, info);
    const png_byte color = png_get_color_type(png, info);
    if (depth > 8) {
        failure = fmt::format("unsupported bit depth {} (only 8-bit PNG is supported)", depth);
        png_error(png, failure.c_str());
    }
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.height = png_get_image_height(png, info);
    img.width = png_get_image_width(png, info);
    if (png_get_rowbytes(png, info) != 3 * img.width) {
        failure = "unexpected row layout after RGB conversion";
        png_error(png, failure.c_str());
    }
    img.samples.assign(3 * img.height * img.width, 0);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.samples.data() + 3 * y * img.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void encode_png(const RgbImage& img, const std::filesystem::path& path) {
    if (img.samples.size() != 3 * img.height * img.width || img.height == 0 || img.width == 0) {
        throw ImageError("cannot encode an empty or inconsistent image");
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw ImageError(fmt::format("cannot write image '{}'", path.string()));

    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
    if (!png) throw ImageError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageError("libpng initialisation failed");
    }
    std::vector<png_bytep> rows(img.height);
    for (std::size_t y = 0; y < img.height; ++y) {
        rows[y] = const_cast<png_bytep>(img.samples.data() + 3 * y * img.width);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError(fmt::format("PNG encoding of '{}' failed: {}", path.string(), message));
    }
    png_init_io(png, file.get());
    png_set_compression_level(png, 6);
    png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_BASE, PNG_FILTER_TYPE_BASE);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace smoothcam
