#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "smoothcam/imaging.hpp"
#include "smoothcam/model.hpp"
#include "smoothcam/tensor.hpp"

namespace fixtures {

using smoothcam::Model;
using smoothcam::Tensor;

Tensor random_tensor(const Tensor::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

smoothcam::InputSpec unit_input(std::size_t channels, std::size_t height, std::size_t width);

/// conv1(3x3, P=1) -> relu -> gap -> fc. Input 2x6x6, 3 feature maps, 4 classes.
Model gap_net(std::uint64_t seed);

/// conv1(3x3, P=1) -> relu -> pool(2/2) -> flatten -> fc. Input 2x8x8, 4 maps, 3 classes.
/// Exactly five layers when the relu is counted.
Model pool_net(std::uint64_t seed);

/// conv1(3x3, P=1) -> relu -> conv2(3x3, S=2, P=1) -> relu -> flatten -> fc.
/// Input 2x8x8; conv1 has 4 maps of 8x8, conv2 5 maps of 4x4; 3 classes.
Model two_conv_net(std::uint64_t seed);

/// A small VGG-style stack whose last conv layer is named block5_conv3
/// (8 maps of 14x14 on a 3x28x28 input), 5 classes.
Model vgg_like(std::uint64_t seed);

/// A network with a 4x4 visualized layer for higher-order checks:
/// conv1(3x3, P=1, 3 maps on 1x4x4) -> relu -> conv2(2x2) -> relu -> flatten -> fc.
Model small_map_net(std::uint64_t seed);

/// Deterministic RGB test pattern.
smoothcam::RgbImage pattern_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// Fresh, empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// Directory holding the files shipped with the tests.
std::filesystem::path data_dir();

}  // namespace fixtures
