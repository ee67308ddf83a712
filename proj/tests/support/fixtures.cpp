#include "fixtures.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <optional>

namespace fixtures {

using smoothcam::ConvSpec;
using smoothcam::LayerDef;
using smoothcam::LayerKind;
using smoothcam::LayerRecord;

Tensor random_tensor(const Tensor::Shape& shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

smoothcam::InputSpec unit_input(std::size_t channels, std::size_t height, std::size_t width) {
    return {channels, height, width, std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

namespace {

LayerDef conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
              std::optional<std::size_t> padding, std::mt19937_64& rng, double bias_lo = 0.05, double bias_hi = 0.4) {
    LayerRecord r;
    r.name = name;
    r.kind = LayerKind::conv;
    r.conv = ConvSpec{kernel, kernel, stride, stride, padding, in, out};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    return {r, random_tensor({out, in, kernel, kernel}, rng, -bound, 1.5 * bound),
            random_tensor({out}, rng, bias_lo, bias_hi)};
}

LayerDef simple(const std::string& name, LayerKind kind) {
    LayerRecord r;
    r.name = name;
    r.kind = kind;
    return {r, {}, {}};
}

LayerDef pool(const std::string& name, std::size_t window, std::size_t stride) {
    LayerDef d = simple(name, LayerKind::maxpool);
    d.record.pool_window = window;
    d.record.pool_stride = stride;
    return d;
}

LayerDef fc(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    LayerRecord r;
    r.name = name;
    r.kind = LayerKind::linear;
    r.in_features = in;
    r.out_features = out;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {r, random_tensor({out, in}, rng, -bound, bound), random_tensor({out}, rng, -0.1, 0.1)};
}

std::vector<std::string> labels(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("class_" + std::to_string(i));
    return out;
}

}  // namespace

Model gap_net(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LayerDef> layers;
    layers.push_back(conv("conv1", 2, 3, 3, 1, 1, rng));
    layers.push_back(simple("conv1_relu", LayerKind::relu));
    layers.push_back(simple("gap", LayerKind::gap));
    layers.push_back(fc("fc", 3, 4, rng));
    return smoothcam::build_model(unit_input(2, 6, 6), std::move(layers), labels(4));
}

Model pool_net(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LayerDef> layers;
    layers.push_back(conv("conv1", 2, 4, 3, 1, 1, rng));
    layers.push_back(simple("conv1_relu", LayerKind::relu));
    layers.push_back(pool("pool1", 2, 2));
    layers.push_back(simple("flatten", LayerKind::flatten));
    layers.push_back(fc("fc", 64, 3, rng));
    return smoothcam::build_model(unit_input(2, 8, 8), std::move(layers), labels(3));
}

Model two_conv_net(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LayerDef> layers;
    layers.push_back(conv("conv1", 2, 4, 3, 1, 1, rng));
    layers.push_back(simple("conv1_relu", LayerKind::relu));
    layers.push_back(conv("conv2", 4, 5, 3, 2, 1, rng));
    layers.push_back(simple("conv2_relu", LayerKind::relu));
    layers.push_back(simple("flatten", LayerKind::flatten));
    layers.push_back(fc("fc", 80, 3, rng));
    return smoothcam::build_model(unit_input(2, 8, 8), std::move(layers), labels(3));
}

Model vgg_like(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LayerDef> layers;
    layers.push_back(conv("block1_conv1", 3, 4, 3, 1, 1, rng));
    layers.push_back(simple("block1_conv1_relu", LayerKind::relu));
    layers.push_back(pool("block1_pool", 2, 2));
    layers.push_back(conv("block5_conv3", 4, 8, 3, 1, std::nullopt, rng));
    layers.push_back(simple("block5_conv3_relu", LayerKind::relu));
    layers.push_back(pool("block5_pool", 2, 2));
    layers.push_back(simple("flatten", LayerKind::flatten));
    layers.push_back(fc("predictions", 8 * 7 * 7, 5, rng));
    smoothcam::InputSpec input{3, 28, 28, {0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
    return smoothcam::build_model(input, std::move(layers), {"dog", "cat", "bird", "car", "tree"});
}

Model small_map_net(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LayerDef> layers;
    layers.push_back(conv("conv1", 1, 3, 3, 1, 1, rng));
    layers.push_back(simple("conv1_relu", LayerKind::relu));
    layers.push_back(conv("conv2", 3, 4, 2, 1, 0, rng));
    layers.push_back(simple("conv2_relu", LayerKind::relu));
    layers.push_back(simple("flatten", LayerKind::flatten));
    layers.push_back(fc("fc", 36, 3, rng));
    return smoothcam::build_model(unit_input(1, 4, 4), std::move(layers), labels(3));
}

smoothcam::RgbImage pattern_image(std::size_t height, std::size_t width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> jitter(0, 40);
    smoothcam::RgbImage img(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const bool inside = y > height / 4 && y < 3 * height / 4 && x > width / 3 && x < 5 * width / 6;
            const int base = inside ? 200 : 50;
            img.set_pixel(y, x,
                          {static_cast<std::uint8_t>(base + jitter(rng)),
                           static_cast<std::uint8_t>((x * 255) / std::max<std::size_t>(1, width - 1)),
                           static_cast<std::uint8_t>(255 - base - jitter(rng) / 2)});
        }
    }
    return img;
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("smoothcam_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::filesystem::path data_dir() { return SMOOTHCAM_TEST_DATA_DIR; }

}  // namespace fixtures
