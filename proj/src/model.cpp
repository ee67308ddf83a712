#include "smoothcam/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace smoothcam {

using json = nlohmann::json;
using Kind = ModelError::Kind;

namespace {

constexpr std::size_t header_bytes = 4 + 4 + 8;

template <typename T>
T read_le(const std::uint8_t* p) {
    T v{};
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

double read_f32(const std::uint8_t* p) { return static_cast<double>(std::bit_cast<float>(read_le<std::uint32_t>(p))); }

void write_f32(std::vector<std::uint8_t>& out, double v) {
    write_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::linear: return "linear";
        case LayerKind::gap: return "gap";
    }
    return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view text) {
    for (auto k : {LayerKind::conv, LayerKind::relu, LayerKind::maxpool, LayerKind::flatten, LayerKind::linear,
                   LayerKind::gap}) {
        if (to_string(k) == text) return k;
    }
    return std::nullopt;
}

Tensor::Shape LayerRecord::weight_shape() const {
    if (kind == LayerKind::conv) return {conv.out_channels, conv.in_channels, conv.kernel_h, conv.kernel_w};
    if (kind == LayerKind::linear) return {out_features, in_features};
    return {};
}

Tensor::Shape LayerRecord::bias_shape() const {
    if (kind == LayerKind::conv) return {conv.out_channels};
    if (kind == LayerKind::linear) return {out_features};
    return {};
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Tensor::Shape> propagate_shapes(const ModelManifest& manifest) {
    const InputSpec& in = manifest.input;
    Tensor::Shape current{in.channels, in.height, in.width};
    std::string previous = "input";
    std::vector<Tensor::Shape> shapes;
    shapes.reserve(manifest.layers.size());

    auto chain_error = [&](const LayerRecord& layer, const std::string& detail) {
        return ModelError(Kind::shape_chain, fmt::format("shape chain broken between '{}' and '{}': {}", previous,
                                                         layer.name, detail));
    };

    for (const LayerRecord& layer : manifest.layers) {
        switch (layer.kind) {
            case LayerKind::conv: {
                if (current.size() != 3) {
                    throw chain_error(layer, fmt::format("conv needs a [C,H,W] input, '{}' produces {}", previous,
                                                         shape_string(current)));
                }
                if (current[0] != layer.conv.in_channels) {
                    throw chain_error(layer, fmt::format("'{}' produces {} channels, '{}' expects {}", previous,
                                                         current[0], layer.name, layer.conv.in_channels));
                }
                try {
                    const Extent2 out = conv_output_shape(current[1], current[2], layer.conv);
                    current = {layer.conv.out_channels, out.height, out.width};
                } catch (const ShapeError& e) {
                    throw chain_error(layer, e.what());
                }
                break;
            }
            case LayerKind::maxpool: {
                if (current.size() != 3) {
                    throw chain_error(layer, fmt::format("maxpool needs a [C,H,W] input, '{}' produces {}", previous,
                                                         shape_string(current)));
                }
                try {
                    const Extent2 out = pool_output_shape(current[1], current[2], layer.pool_window, layer.pool_stride);
                    current = {current[0], out.height, out.width};
                } catch (const ShapeError& e) {
                    throw chain_error(layer, e.what());
                }
                break;
            }
            case LayerKind::gap:
                if (current.size() != 3) {
                    throw chain_error(layer, fmt::format("gap needs a [C,H,W] input, '{}' produces {}", previous,
                                                         shape_string(current)));
                }
                current = {current[0]};
                break;
            case LayerKind::flatten:
                current = {element_count(current)};
                break;
            case LayerKind::relu:
                break;
            case LayerKind::linear:
                if (current.size() != 1 || current[0] != layer.in_features) {
                    throw chain_error(layer, fmt::format("'{}' produces {}, '{}' expects [{}]", previous,
                                                         shape_string(current), layer.name, layer.in_features));
                }
                current = {layer.out_features};
                break;
        }
        shapes.push_back(current);
        previous = layer.name;
    }
    return shapes;
}

void validate_manifest(const ModelManifest& manifest, std::optional<std::uint64_t> payload_bytes) {
    if (manifest.version != camf_version) {
        throw ModelError(Kind::unsupported_version,
                         fmt::format("unsupported format version {} (expected {})", manifest.version, camf_version));
    }
    const InputSpec& in = manifest.input;
    if (in.channels < 1 || in.height < 1 || in.width < 1) {
        throw ModelError(Kind::invalid_input_spec, "input extents must be positive");
    }
    if (in.mean.size() != in.channels || in.std.size() != in.channels) {
        throw ModelError(Kind::invalid_input_spec,
                         fmt::format("input mean/std need {} entries, got {}/{}", in.channels, in.mean.size(),
                                     in.std.size()));
    }
    for (std::size_t c = 0; c < in.channels; ++c) {
        if (!(in.std[c] > 0.0) || !std::isfinite(in.std[c]) || !std::isfinite(in.mean[c])) {
            throw ModelError(Kind::invalid_input_spec,
                             fmt::format("input std for channel {} must be positive and finite", c));
        }
    }
    if (manifest.layers.empty()) throw ModelError(Kind::malformed_manifest, "model has no layers");

    std::set<std::string> names;
    for (const LayerRecord& layer : manifest.layers) {
        if (layer.name.empty()) throw ModelError(Kind::malformed_manifest, "layer with empty name");
        if (!names.insert(layer.name).second) {
            throw ModelError(Kind::malformed_manifest, fmt::format("duplicate layer name '{}'", layer.name));
        }
        if (layer.kind == LayerKind::conv) {
            try {
                layer.conv.validate();
            } catch (const ShapeError& e) {
                throw ModelError(Kind::malformed_manifest, fmt::format("layer '{}': {}", layer.name, e.what()));
            }
        }
        if (layer.kind == LayerKind::maxpool && (layer.pool_window < 1 || layer.pool_stride < 1)) {
            throw ModelError(Kind::malformed_manifest,
                             fmt::format("layer '{}': pool window and stride must be >= 1", layer.name));
        }
        if (layer.kind == LayerKind::linear && (layer.in_features < 1 || layer.out_features < 1)) {
            throw ModelError(Kind::malformed_manifest,
                             fmt::format("layer '{}': linear feature counts must be >= 1", layer.name));
        }
    }

    const auto shapes = propagate_shapes(manifest);
    if (shapes.back().size() != 1) {
        throw ModelError(Kind::shape_chain, fmt::format("final layer '{}' must produce a score vector, got {}",
                                                        manifest.layers.back().name, shape_string(shapes.back())));
    }
    if (shapes.back()[0] != manifest.classes.size()) {
        throw ModelError(Kind::shape_chain, fmt::format("final layer '{}' produces {} scores but {} class labels given",
                                                        manifest.layers.back().name, shapes.back()[0],
                                                        manifest.classes.size()));
    }

    if (!payload_bytes) return;
    struct Span {
        std::uint64_t begin, end;
        std::string owner;
    };
    std::vector<Span> spans;
    for (const LayerRecord& layer : manifest.layers) {
        if (!layer.has_parameters()) continue;
        auto check = [&](const std::optional<ByteRange>& range, const Tensor::Shape& shape, std::string_view what) {
            const std::string owner = fmt::format("{}.{}", layer.name, what);
            if (!range) throw ModelError(Kind::malformed_manifest, fmt::format("'{}' has no byte range", owner));
            if (range->count != element_count(shape)) {
                throw ModelError(Kind::malformed_manifest,
                                 fmt::format("'{}' declares {} values, shape {} needs {}", owner, range->count,
                                             shape_string(shape), element_count(shape)));
            }
            if (range->offset % 4 != 0) {
                throw ModelError(Kind::invalid_byte_range,
                                 fmt::format("'{}' offset {} is not 4-byte aligned", owner, range->offset));
            }
            if (range->end() > *payload_bytes) {
                throw ModelError(Kind::truncated_payload,
                                 fmt::format("'{}' spans bytes [{}, {}) but the payload holds only {} bytes", owner,
                                             range->offset, range->end(), *payload_bytes));
            }
            spans.push_back({range->offset, range->end(), owner});
        };
        check(layer.weights, layer.weight_shape(), "weights");
        check(layer.bias, layer.bias_shape(), "bias");
    }
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].begin < spans[i - 1].end) {
            throw ModelError(Kind::invalid_byte_range,
                             fmt::format("byte ranges of '{}' and '{}' overlap", spans[i - 1].owner, spans[i].owner));
        }
    }
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelManifest manifest, std::vector<LayerParameters> params)
    : manifest_(std::move(manifest)), params_(std::move(params)) {
    validate_manifest(manifest_, std::nullopt);
    shapes_ = propagate_shapes(manifest_);
    if (params_.size() != manifest_.layers.size()) {
        throw ModelError(Kind::malformed_manifest, "parameter list does not match layer list");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const LayerRecord& layer = manifest_.layers[i];
        if (!layer.has_parameters()) continue;
        if (params_[i].weights.shape() != layer.weight_shape() || params_[i].bias.shape() != layer.bias_shape()) {
            throw ModelError(Kind::malformed_manifest,
                             fmt::format("layer '{}' parameters {} / {} do not match declared {} / {}", layer.name,
                                         shape_string(params_[i].weights.shape()),
                                         shape_string(params_[i].bias.shape()), shape_string(layer.weight_shape()),
                                         shape_string(layer.bias_shape())));
        }
    }
}

Tensor::Shape Model::input_shape() const {
    return {manifest_.input.channels, manifest_.input.height, manifest_.input.width};
}

std::optional<std::size_t> Model::find_layer(std::string_view name) const {
    for (std::size_t i = 0; i < manifest_.layers.size(); ++i) {
        if (manifest_.layers[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<std::string> Model::layer_names() const {
    std::vector<std::string> names;
    for (const auto& l : manifest_.layers) names.push_back(l.name);
    return names;
}

// ---------------------------------------------------------------------------
// Manifest JSON

namespace {

json range_to_json(const ByteRange& r) { return {{"offset", r.offset}, {"count", r.count}}; }

json manifest_to_json(const ModelManifest& m) {
    json layers = json::array();
    for (const LayerRecord& l : m.layers) {
        json j{{"name", l.name}, {"kind", std::string(to_string(l.kind))}};
        switch (l.kind) {
            case LayerKind::conv:
                j["in_channels"] = l.conv.in_channels;
                j["out_channels"] = l.conv.out_channels;
                j["kernel"] = {l.conv.kernel_h, l.conv.kernel_w};
                j["stride"] = {l.conv.stride_h, l.conv.stride_w};
                if (l.conv.padding) {
                    j["padding"] = *l.conv.padding;
                } else {
                    j["padding"] = "same";
                }
                break;
            case LayerKind::maxpool:
                j["window"] = l.pool_window;
                j["stride"] = l.pool_stride;
                break;
            case LayerKind::linear:
                j["in_features"] = l.in_features;
                j["out_features"] = l.out_features;
                break;
            default:
                break;
        }
        if (l.weights) j["weights"] = range_to_json(*l.weights);
        if (l.bias) j["bias"] = range_to_json(*l.bias);
        layers.push_back(std::move(j));
    }
    return {
        {"input",
         {{"channels", m.input.channels},
          {"height", m.input.height},
          {"width", m.input.width},
          {"mean", m.input.mean},
          {"std", m.input.std}}},
        {"layers", std::move(layers)},
        {"classes", m.classes},
    };
}

std::pair<std::size_t, std::size_t> pair_field(const json& j, const char* key) {
    const json& v = j.at(key);
    if (v.is_array()) {
        if (v.size() != 2) throw ModelError(Kind::malformed_manifest, fmt::format("'{}' needs two entries", key));
        return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    }
    const auto s = v.get<std::size_t>();
    return {s, s};
}

ModelManifest manifest_from_json(const json& j, std::uint32_t version) {
    ModelManifest m;
    m.version = version;
    const json& in = j.at("input");
    m.input.channels = in.at("channels").get<std::size_t>();
    m.input.height = in.at("height").get<std::size_t>();
    m.input.width = in.at("width").get<std::size_t>();
    m.input.mean = in.at("mean").get<std::vector<double>>();
    m.input.std = in.at("std").get<std::vector<double>>();
    m.classes = j.at("classes").get<std::vector<std::string>>();

    for (const json& lj : j.at("layers")) {
        LayerRecord l;
        l.name = lj.at("name").get<std::string>();
        const auto kind_text = lj.at("kind").get<std::string>();
        const auto kind = parse_layer_kind(kind_text);
        if (!kind) {
            throw ModelError(Kind::malformed_manifest,
                             fmt::format("layer '{}' has unsupported kind '{}'", l.name, kind_text));
        }
        l.kind = *kind;
        switch (l.kind) {
            case LayerKind::conv: {
                l.conv.in_channels = lj.at("in_channels").get<std::size_t>();
                l.conv.out_channels = lj.at("out_channels").get<std::size_t>();
                std::tie(l.conv.kernel_h, l.conv.kernel_w) = pair_field(lj, "kernel");
                std::tie(l.conv.stride_h, l.conv.stride_w) = pair_field(lj, "stride");
                const json& pad = lj.at("padding");
                if (pad.is_string()) {
                    if (pad.get<std::string>() != "same") {
                        throw ModelError(Kind::malformed_manifest,
                                         fmt::format("layer '{}': padding must be an integer or \"same\"", l.name));
                    }
                    l.conv.padding.reset();
                } else {
                    l.conv.padding = pad.get<std::size_t>();
                }
                break;
            }
            case LayerKind::maxpool:
                l.pool_window = lj.at("window").get<std::size_t>();
                l.pool_stride = lj.at("stride").get<std::size_t>();
                break;
            case LayerKind::linear:
                l.in_features = lj.at("in_features").get<std::size_t>();
                l.out_features = lj.at("out_features").get<std::size_t>();
                break;
            default:
                break;
        }
        if (lj.contains("weights")) {
            l.weights = ByteRange{lj["weights"].at("offset").get<std::uint64_t>(),
                                  lj["weights"].at("count").get<std::uint64_t>()};
        }
        if (lj.contains("bias")) {
            l.bias = ByteRange{lj["bias"].at("offset").get<std::uint64_t>(),
                               lj["bias"].at("count").get<std::uint64_t>()};
        }
        m.layers.push_back(std::move(l));
    }
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Load / save

Model parse_model(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < camf_magic.size() ||
        std::memcmp(bytes.data(), camf_magic.data(), camf_magic.size()) != 0) {
        throw ModelError(Kind::bad_magic, "bad magic: not a .camf model file");
    }
    if (bytes.size() < header_bytes) throw ModelError(Kind::truncated_payload, "file ends inside the header");
    const auto version = read_le<std::uint32_t>(bytes.data() + 4);
    if (version != camf_version) {
        throw ModelError(Kind::unsupported_version,
                         fmt::format("unsupported format version {} (expected {})", version, camf_version));
    }
    const auto manifest_len = read_le<std::uint64_t>(bytes.data() + 8);
    if (manifest_len > bytes.size() - header_bytes) {
        throw ModelError(Kind::truncated_payload,
                         fmt::format("manifest declares {} bytes but only {} follow the header", manifest_len,
                                     bytes.size() - header_bytes));
    }
    const auto* text = reinterpret_cast<const char*>(bytes.data() + header_bytes);

    ModelManifest manifest;
    try {
        manifest = manifest_from_json(json::parse(text, text + manifest_len), version);
    } catch (const json::exception& e) {
        throw ModelError(Kind::malformed_manifest, fmt::format("malformed manifest: {}", e.what()));
    }

    const std::span<const std::uint8_t> payload = bytes.subspan(header_bytes + manifest_len);
    validate_manifest(manifest, payload.size());

    std::vector<LayerParameters> params(manifest.layers.size());
    auto materialize = [&](const ByteRange& range, Tensor::Shape shape) {
        std::vector<double> values(range.count);
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_f32(payload.data() + range.offset + 4 * i);
        return Tensor(std::move(shape), std::move(values));
    };
    for (std::size_t i = 0; i < manifest.layers.size(); ++i) {
        const LayerRecord& l = manifest.layers[i];
        if (!l.has_parameters()) continue;
        params[i].weights = materialize(*l.weights, l.weight_shape());
        params[i].bias = materialize(*l.bias, l.bias_shape());
        if (!params[i].weights.all_finite() || !params[i].bias.all_finite()) {
            throw ModelError(Kind::malformed_manifest, fmt::format("layer '{}' has non-finite parameters", l.name));
        }
    }
    return Model(std::move(manifest), std::move(params));
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError(Kind::io, fmt::format("cannot open model file '{}'", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_model(bytes);
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
    const std::string manifest = manifest_to_json(model.manifest()).dump(1);
    std::vector<std::uint8_t> out(camf_magic.begin(), camf_magic.end());
    write_le(out, camf_version);
    write_le(out, static_cast<std::uint64_t>(manifest.size()));
    out.insert(out.end(), manifest.begin(), manifest.end());

    const std::size_t payload_start = out.size();
    std::uint64_t payload_size = 0;
    for (const LayerRecord& l : model.layers()) {
        if (l.weights) payload_size = std::max(payload_size, l.weights->end());
        if (l.bias) payload_size = std::max(payload_size, l.bias->end());
    }
    out.resize(payload_start + payload_size, 0);

    std::vector<std::uint8_t> scratch;
    auto put = [&](const ByteRange& range, const Tensor& t) {
        scratch.clear();
        for (double v : t.values()) write_f32(scratch, v);
        std::copy(scratch.begin(), scratch.end(), out.begin() + static_cast<std::ptrdiff_t>(payload_start + range.offset));
    };
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const LayerRecord& l = model.layer(i);
        if (!l.has_parameters()) continue;
        put(*l.weights, model.parameters(i).weights);
        put(*l.bias, model.parameters(i).bias);
    }
    return out;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelError(Kind::io, fmt::format("cannot write model file '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ModelError(Kind::io, fmt::format("short write to '{}'", path.string()));
}

Model build_model(InputSpec input, std::vector<LayerDef> layers, std::vector<std::string> classes) {
    ModelManifest manifest;
    manifest.input = std::move(input);
    manifest.classes = std::move(classes);
    std::vector<LayerParameters> params;
    std::uint64_t offset = 0;
    auto to_f32 = [](Tensor t) {
        for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
        return t;
    };
    for (LayerDef& def : layers) {
        LayerParameters p;
        if (def.record.has_parameters()) {
            def.record.weights = ByteRange{offset, def.weights.size()};
            offset = def.record.weights->end();
            def.record.bias = ByteRange{offset, def.bias.size()};
            offset = def.record.bias->end();
            p.weights = to_f32(std::move(def.weights));
            p.bias = to_f32(std::move(def.bias));
        } else {
            def.record.weights.reset();
            def.record.bias.reset();
        }
        manifest.layers.push_back(std::move(def.record));
        params.push_back(std::move(p));
    }
    validate_manifest(manifest, offset);
    return Model(std::move(manifest), std::move(params));
}

// ---------------------------------------------------------------------------
// Summary

ModelSummary summarize(const Model& model) {
    ModelSummary s;
    s.input_shape = model.input_shape();
    s.class_count = model.class_count();
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const LayerRecord& l = model.layer(i);
        std::size_t params = 0;
        if (l.has_parameters()) params = element_count(l.weight_shape()) + element_count(l.bias_shape());
        if (l.kind == LayerKind::conv) ++s.conv_count;
        s.parameter_count += params;
        s.layers.push_back({l.name, l.kind, model.output_shape(i), params});
    }
    return s;
}

std::string format_summary(const ModelSummary& summary) {
    std::size_t name_width = 5;
    for (const auto& l : summary.layers) name_width = std::max(name_width, l.name.size());
    std::string out;
    for (const auto& l : summary.layers) {
        out += fmt::format("{:<{}}  {:<8} {:<16} {}\n", l.name, name_width, to_string(l.kind),
                           shape_string(l.output_shape), l.parameter_count);
    }
    out += fmt::format("input {}, {} layers, {} conv, {} parameters, {} classes\n", shape_string(summary.input_shape),
                       summary.layers.size(), summary.conv_count, summary.parameter_count, summary.class_count);
    return out;
}

}  // namespace smoothcam
