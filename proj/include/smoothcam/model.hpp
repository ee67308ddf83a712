#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smoothcam/error.hpp"
#include "smoothcam/tensor.hpp"

namespace smoothcam {

// .camf container, all integers little-endian:
//   "CAMF" | u32 version (=1) | u64 manifest length | UTF-8 JSON manifest | f32 payload
// Payload tensors are row-major; conv weights [out, in, kh, kw], linear weights [out, in].
inline constexpr std::string_view camf_magic = "CAMF";
inline constexpr std::uint32_t camf_version = 1;

enum class LayerKind { conv, relu, maxpool, flatten, linear, gap };

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view text);

/// Location of one tensor in the payload: byte offset and number of f32 values.
struct ByteRange {
    std::uint64_t offset = 0;
    std::uint64_t count = 0;
    std::uint64_t end() const { return offset + count * 4; }
    friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct LayerRecord {
    std::string name;
    LayerKind kind = LayerKind::relu;
    ConvSpec conv;                  // conv
    std::size_t pool_window = 2;    // maxpool
    std::size_t pool_stride = 2;    // maxpool
    std::size_t in_features = 0;    // linear
    std::size_t out_features = 0;   // linear
    std::optional<ByteRange> weights;
    std::optional<ByteRange> bias;

    bool has_parameters() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
    Tensor::Shape weight_shape() const;
    Tensor::Shape bias_shape() const;
};

/// Input preprocessing: samples scaled to [0,1], then (x - mean[c]) / std[c].
struct InputSpec {
    std::size_t channels = 3;
    std::size_t height = 224;
    std::size_t width = 224;
    std::vector<double> mean;
    std::vector<double> std;
};

struct ModelManifest {
    std::uint32_t version = camf_version;
    InputSpec input;
    std::vector<LayerRecord> layers;
    std::vector<std::string> classes;
};

class ModelError : public Error {
public:
    enum class Kind {
        io,
        bad_magic,
        unsupported_version,
        malformed_manifest,
        invalid_input_spec,
        shape_chain,
        invalid_byte_range,
        truncated_payload,
    };

    ModelError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct LayerParameters {
    Tensor weights;
    Tensor bias;
};

/// A validated manifest plus its materialized parameters. Immutable after
/// construction.
class Model {
public:
    Model(ModelManifest manifest, std::vector<LayerParameters> params);

    const ModelManifest& manifest() const { return manifest_; }
    const InputSpec& input_spec() const { return manifest_.input; }
    const std::vector<LayerRecord>& layers() const { return manifest_.layers; }
    const LayerRecord& layer(std::size_t i) const { return manifest_.layers.at(i); }
    const LayerParameters& parameters(std::size_t i) const { return params_.at(i); }
    /// Output shape of layer i, from symbolic propagation.
    const Tensor::Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
    Tensor::Shape input_shape() const;
    std::size_t class_count() const { return manifest_.classes.size(); }
    const std::vector<std::string>& classes() const { return manifest_.classes; }

    std::optional<std::size_t> find_layer(std::string_view name) const;
    std::vector<std::string> layer_names() const;

private:
    ModelManifest manifest_;
    std::vector<LayerParameters> params_;
    std::vector<Tensor::Shape> shapes_;
};

/// Symbolic shape propagation through the layer chain; throws
/// ModelError(shape_chain) naming the two layers that fail to connect.
std::vector<Tensor::Shape> propagate_shapes(const ModelManifest& manifest);

/// Checks the input spec, name uniqueness, the shape chain, the class count and
/// (when payload_bytes is given) that byte ranges are in bounds and disjoint.
void validate_manifest(const ModelManifest& manifest, std::optional<std::uint64_t> payload_bytes);

Model load_model(const std::filesystem::path& path);
Model parse_model(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_model(const Model& model);
void save_model(const Model& model, const std::filesystem::path& path);

/// A layer description plus parameters, for building models in memory.
struct LayerDef {
    LayerRecord record;
    Tensor weights;
    Tensor bias;
};

/// Assembles a model, assigning payload byte ranges in layer order and
/// rounding parameters to f32 so the result survives a save/load round trip
/// bit for bit.
Model build_model(InputSpec input, std::vector<LayerDef> layers, std::vector<std::string> classes);

struct LayerSummary {
    std::string name;
    LayerKind kind;
    Tensor::Shape output_shape;
    std::size_t parameter_count;
};

struct ModelSummary {
    Tensor::Shape input_shape;
    std::vector<LayerSummary> layers;
    std::size_t conv_count = 0;
    std::size_t parameter_count = 0;
    std::size_t class_count = 0;
};

ModelSummary summarize(const Model& model);

/// One line per layer (name, kind, output shape, parameter count) followed by
/// a single totals line.
std::string format_summary(const ModelSummary& summary);

}  // namespace smoothcam
