#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "smoothcam/autodiff.hpp"
#include "smoothcam/model.hpp"
#include "support/fixtures.hpp"

using namespace smoothcam;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<double> read_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::vector<double> values;
    double v;
    while (in >> v) values.push_back(v);
    return values;
}

std::vector<std::uint8_t> assemble(const std::string& manifest, std::size_t payload_floats,
                                   std::uint32_t version = 1) {
    std::vector<std::uint8_t> out{'C', 'A', 'M', 'F'};
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(version >> (8 * i)));
    const std::uint64_t len = manifest.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    out.insert(out.end(), manifest.begin(), manifest.end());
    out.resize(out.size() + 4 * payload_floats, 0);
    return out;
}

ModelError::Kind error_kind(const std::vector<std::uint8_t>& bytes) {
    try {
        parse_model(bytes);
    } catch (const ModelError& e) {
        return e.kind();
    }
    FAIL("expected ModelError");
    return ModelError::Kind::io;
}

// conv 1->2 (3x3, P=1) on 1x4x4, then conv2 expecting `next_in` channels, gap, linear 2->2.
std::string two_conv_manifest(int next_in, const std::string& extra_input = "") {
    std::ostringstream os;
    os << R"({"input": {"channels": 1, "height": 4, "width": 4, "mean": [0.0], "std": [)"
       << (extra_input.empty() ? "1.0" : extra_input) << R"(]},
 "layers": [
  {"name": "c1", "kind": "conv", "in_channels": 1, "out_channels": 2, "kernel": [3,3], "stride": [1,1],
   "padding": 1, "weights": {"offset": 0, "count": 18}, "bias": {"offset": 72, "count": 2}},
  {"name": "c2", "kind": "conv", "in_channels": )"
       << next_in << R"(, "out_channels": 2, "kernel": 1, "stride": 1, "padding": 0,
   "weights": {"offset": 80, "count": )"
       << 2 * next_in << R"(}, "bias": {"offset": )" << 80 + 8 * next_in << R"(, "count": 2}},
  {"name": "g", "kind": "gap"},
  {"name": "fc", "kind": "linear", "in_features": 2, "out_features": 2,
   "weights": {"offset": )"
       << 88 + 8 * next_in << R"(, "count": 4}, "bias": {"offset": )" << 104 + 8 * next_in << R"(, "count": 2}}],
 "classes": ["a", "b"]})";
    return os.str();
}

std::size_t two_conv_floats(int next_in) { return 18 + 2 + 2 * static_cast<std::size_t>(next_in) + 2 + 4 + 2; }

}  // namespace

TEST_CASE("the shipped fixture loads and reproduces the recorded logits") {
    const Model model = load_model(fixtures::data_dir() / "tiny.camf");
    CHECK(model.layers().size() == 5);
    CHECK(model.classes() == std::vector<std::string>{"circle", "square", "triangle"});

    const std::vector<double> input = read_values(fixtures::data_dir() / "tiny_input.txt");
    const std::vector<double> expected = read_values(fixtures::data_dir() / "tiny_logits.txt");
    const Tensor logits = infer(model, Tensor({3, 8, 8}, input));
    REQUIRE(logits.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(logits[i] - expected[i]) < 1e-5);
}

TEST_CASE("a well-formed hand-written manifest loads") {
    const Model model = parse_model(assemble(two_conv_manifest(2), two_conv_floats(2)));
    CHECK(model.output_shape(1) == Tensor::Shape{2, 4, 4});
    CHECK(model.output_shape(3) == Tensor::Shape{2});
}

TEST_CASE("load errors are distinct") {
    auto bytes = read_bytes(fixtures::data_dir() / "tiny.camf");

    SUBCASE("flipped magic byte") {
        bytes[1] ^= 0x01;
        CHECK(error_kind(bytes) == ModelError::Kind::bad_magic);
        try {
            parse_model(bytes);
        } catch (const ModelError& e) {
            CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
        }
    }
    SUBCASE("version mismatch") {
        bytes[4] = 2;
        CHECK(error_kind(bytes) == ModelError::Kind::unsupported_version);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
        CHECK(error_kind(bytes) == ModelError::Kind::truncated_payload);
    }
    SUBCASE("truncated manifest") {
        bytes.resize(40);
        CHECK(error_kind(bytes) == ModelError::Kind::truncated_payload);
    }
    SUBCASE("missing file") {
        try {
            load_model("/nonexistent/model.camf");
            FAIL("expected ModelError");
        } catch (const ModelError& e) {
            CHECK(e.kind() == ModelError::Kind::io);
            CHECK(std::string(e.what()).find("/nonexistent/model.camf") != std::string::npos);
        }
    }
}

TEST_CASE("a shape-chain break names both layers") {
    try {
        parse_model(assemble(two_conv_manifest(3), two_conv_floats(3)));
        FAIL("expected ModelError");
    } catch (const ModelError& e) {
        CHECK(e.kind() == ModelError::Kind::shape_chain);
        const std::string what = e.what();
        CHECK(what.find("'c1'") != std::string::npos);
        CHECK(what.find("'c2'") != std::string::npos);
    }
}

TEST_CASE("manifest validation") {
    SUBCASE("zero std is rejected at load") {
        CHECK(error_kind(assemble(two_conv_manifest(2, "0.0"), two_conv_floats(2))) ==
              ModelError::Kind::invalid_input_spec);
    }
    SUBCASE("overlapping byte ranges") {
        std::string m = two_conv_manifest(2);
        const std::string from = R"("bias": {"offset": 72, "count": 2})";
        m.replace(m.find(from), from.size(), R"("bias": {"offset": 64, "count": 2})");
        CHECK(error_kind(assemble(m, two_conv_floats(2))) == ModelError::Kind::invalid_byte_range);
    }
    SUBCASE("unsupported layer kind") {
        std::string m = two_conv_manifest(2);
        m.replace(m.find(R"("kind": "gap")"), 13, R"("kind": "bn")");
        CHECK(error_kind(assemble(m, two_conv_floats(2))) == ModelError::Kind::malformed_manifest);
    }
    SUBCASE("duplicate layer names") {
        std::string m = two_conv_manifest(2);
        m.replace(m.find(R"("name": "g")"), 11, R"("name": "c1")");
        CHECK(error_kind(assemble(m, two_conv_floats(2))) == ModelError::Kind::malformed_manifest);
    }
    SUBCASE("class count must match the score vector") {
        std::string m = two_conv_manifest(2);
        m.replace(m.find(R"(["a", "b"])"), 10, R"(["a"])");
        CHECK(error_kind(assemble(m, two_conv_floats(2))) == ModelError::Kind::shape_chain);
    }
    SUBCASE("malformed JSON") {
        CHECK(error_kind(assemble("{\"input\": ", 0)) == ModelError::Kind::malformed_manifest);
    }
}

TEST_CASE("summary of the shipped fixture") {
    // Hand propagation: 3x8x8 -conv 3x3 P1-> 4x8x8 -relu-> 4x8x8 -pool 2/2-> 4x4x4 -flatten-> 64 -fc-> 3.
    // Parameters: conv 4*3*3*3 + 4 = 112, fc 3*64 + 3 = 195.
    const ModelSummary s = summarize(load_model(fixtures::data_dir() / "tiny.camf"));
    REQUIRE(s.layers.size() == 5);
    CHECK(s.layers[0].output_shape == Tensor::Shape{4, 8, 8});
    CHECK(s.layers[0].parameter_count == 112);
    CHECK(s.layers[1].output_shape == Tensor::Shape{4, 8, 8});
    CHECK(s.layers[2].output_shape == Tensor::Shape{4, 4, 4});
    CHECK(s.layers[3].output_shape == Tensor::Shape{64});
    CHECK(s.layers[4].output_shape == Tensor::Shape{3});
    CHECK(s.layers[4].parameter_count == 195);
    CHECK(s.conv_count == 1);
    CHECK(s.parameter_count == 307);

    const std::string text = format_summary(s);
    std::size_t lines = 0;
    for (char c : text) lines += c == '\n';
    CHECK(lines == 6);  // five layers and the totals line
    CHECK(text.find("conv1") != std::string::npos);
    CHECK(text.find("[4x4x4]") != std::string::npos);
}

TEST_CASE("summary of a model without conv layers") {
    LayerRecord flat;
    flat.name = "flatten";
    flat.kind = LayerKind::flatten;
    LayerRecord fc;
    fc.name = "fc";
    fc.kind = LayerKind::linear;
    fc.in_features = 12;
    fc.out_features = 2;
    const Model model = build_model(fixtures::unit_input(3, 2, 2),
                                    {{flat, {}, {}}, {fc, Tensor({2, 12}, 0.5), Tensor({2})}}, {"x", "y"});
    const ModelSummary s = summarize(model);
    CHECK(s.conv_count == 0);
    CHECK(s.layers.size() == 2);
    CHECK(format_summary(s).find("0 conv") != std::string::npos);
}

TEST_CASE("the VGG-style fixture exposes block5_conv3") {
    const ModelSummary s = summarize(fixtures::vgg_like(1));
    const auto it = std::find_if(s.layers.begin(), s.layers.end(),
                                 [](const LayerSummary& l) { return l.name == "block5_conv3"; });
    REQUIRE(it != s.layers.end());
    CHECK(it->output_shape == Tensor::Shape{8, 14, 14});
}

TEST_CASE("save/load round trip and repeated loads are bit-identical") {
    const auto dir = fixtures::scratch_dir("model_roundtrip");
    for (const Model& model : {fixtures::pool_net(3), fixtures::two_conv_net(4), fixtures::vgg_like(5)}) {
        save_model(model, dir / "m.camf");
        const Model a = load_model(dir / "m.camf");
        const Model b = load_model(dir / "m.camf");
        REQUIRE(a.layers().size() == model.layers().size());
        for (std::size_t i = 0; i < model.layers().size(); ++i) {
            CHECK(a.parameters(i).weights == model.parameters(i).weights);
            CHECK(a.parameters(i).bias == model.parameters(i).bias);
            CHECK(a.parameters(i).weights == b.parameters(i).weights);
            CHECK(a.parameters(i).bias == b.parameters(i).bias);
        }
        CHECK(serialize_model(a) == serialize_model(model));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("propagated shapes equal runtime tensor shapes") {
    std::mt19937_64 rng(21);
    const Model bundled = load_model(fixtures::data_dir() / "tiny.camf");
    for (const Model* model : {&bundled}) {
        const Tensor input = fixtures::random_tensor(model->input_shape(), rng);
        const ForwardTrace trace = forward_to(*model, input, model->layer(0).name);
        for (std::size_t i = 0; i < model->layers().size(); ++i) CHECK(trace.outputs[i].shape() == model->output_shape(i));
    }
    for (const Model& model : {fixtures::gap_net(1), fixtures::pool_net(1), fixtures::two_conv_net(1),
                               fixtures::vgg_like(1), fixtures::small_map_net(1)}) {
        const Tensor input = fixtures::random_tensor(model.input_shape(), rng);
        const ForwardTrace trace = forward_to(model, input, model.layer(0).name);
        for (std::size_t i = 0; i < model.layers().size(); ++i) CHECK(trace.outputs[i].shape() == model.output_shape(i));
    }
}
