#include "smoothcam/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "smoothcam/autodiff.hpp"
#include "smoothcam/gradcheck.hpp"
#include "smoothcam/imaging.hpp"
#include "smoothcam/model.hpp"

namespace smoothcam::cli {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
    const std::string_view t = trim(text);
    T value{};
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || end != t.data() + t.size() || t.empty()) {
        throw RequestError(fmt::format("invalid {} '{}'", what, text));
    }
    return value;
}

bool parse_bool(std::string_view text, std::string_view what) {
    const std::string_view t = trim(text);
    if (t == "true") return true;
    if (t == "false") return false;
    throw RequestError(fmt::format("invalid {} '{}' (expected true or false)", what, text));
}

}  // namespace

// ---------------------------------------------------------------------------
// Argument syntax

std::vector<Coord> parse_subset(std::string_view text) {
    std::vector<Coord> coords;
    std::string_view rest = trim(text);
    if (rest.empty()) return coords;
    std::size_t pos = 0;
    while (pos < rest.size()) {
        const auto semi = rest.find(';', pos);
        const std::string_view item = trim(rest.substr(pos, semi == std::string_view::npos ? semi : semi - pos));
        if (item.size() < 5 || item.front() != '(' || item.back() != ')') {
            throw RequestError(fmt::format("invalid subset coordinate '{}' (expected \"(i,j)\")", item));
        }
        const std::string_view inner = item.substr(1, item.size() - 2);
        const auto comma = inner.find(',');
        if (comma == std::string_view::npos) {
            throw RequestError(fmt::format("invalid subset coordinate '{}' (expected \"(i,j)\")", item));
        }
        coords.push_back({parse_number<std::size_t>(inner.substr(0, comma), "subset row"),
                          parse_number<std::size_t>(inner.substr(comma + 1), "subset column")});
        if (semi == std::string_view::npos) break;
        pos = semi + 1;
    }
    return coords;
}

std::string format_subset(const std::vector<Coord>& subset) {
    std::string out;
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) out += ';';
        out += fmt::format("({},{})", subset[i].row, subset[i].col);
    }
    return out;
}

std::vector<std::size_t> parse_filters(std::string_view text) {
    std::vector<std::size_t> filters;
    const std::string_view t = trim(text);
    if (t.empty() || t == "all") return filters;
    std::size_t pos = 0;
    while (true) {
        const auto comma = t.find(',', pos);
        filters.push_back(parse_number<std::size_t>(t.substr(pos, comma == std::string_view::npos ? comma : comma - pos),
                                                    "filter index"));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return filters;
}

std::string format_filters(const std::vector<std::size_t>& filters) {
    if (filters.empty()) return "all";
    std::string out;
    for (std::size_t i = 0; i < filters.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(filters[i]);
    }
    return out;
}

std::string format_grid(const Tensor& map) {
    std::string out;
    for (std::size_t r = 0; r < map.dim(0); ++r) {
        for (std::size_t c = 0; c < map.dim(1); ++c) {
            if (c) out += ' ';
            out += fmt::format("{}", map.at(r, c));
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run manifest

void RunManifest::set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    entries_.emplace_back(std::move(key), std::move(value));
}

const std::string* RunManifest::find(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return &v;
    }
    return nullptr;
}

const std::string& RunManifest::at(std::string_view key) const {
    if (const auto* v = find(key)) return *v;
    throw RequestError(fmt::format("run manifest has no '{}' entry", key));
}

std::string RunManifest::str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += v.empty() ? k + ":\n" : k + ": " + v + "\n";
    return out;
}

RunManifest RunManifest::parse(std::string_view text) {
    RunManifest m;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        if (line.empty() || line.front() == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) throw RequestError(fmt::format("malformed manifest line '{}'", line));
        m.set(std::string(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    }
    return m;
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ModelError(ModelError::Kind::io, fmt::format("cannot open run manifest '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

CamInvocation invocation_from_manifest(const RunManifest& m) {
    CamInvocation inv;
    inv.model = m.at("model");
    inv.image = m.at("image");
    CamRequest& req = inv.request;
    req.layer_name = m.at("layer");
    const auto method = parse_cam_method(m.at("method"));
    if (!method) throw RequestError(fmt::format("unknown method '{}'", m.at("method")));
    req.method = *method;
    const std::size_t recorded_class = parse_number<std::size_t>(m.at("class"), "class");
    const std::string* source = m.find("class_source");
    if (!source || *source != "argmax") req.class_index = recorded_class;
    req.n_samples = parse_number<std::size_t>(m.at("nsamples"), "nsamples");
    req.std_dev = parse_number<double>(m.at("std_dev"), "std_dev");
    req.seed = parse_number<std::uint64_t>(m.at("seed"), "seed");
    req.filters = parse_filters(m.at("filters"));
    req.region = parse_bool(m.at("region"), "region");
    req.subset = parse_subset(m.at("subset"));
    const auto numerator = parse_alpha_numerator(m.at("alpha_numerator"));
    if (!numerator) throw RequestError(fmt::format("unknown alpha numerator '{}'", m.at("alpha_numerator")));
    req.alpha_numerator = *numerator;
    inv.overlay_alpha = parse_number<double>(m.at("overlay_alpha"), "overlay_alpha");
    return inv;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct CamArgs {
    std::string model;
    std::string image;
    std::string layer;
    std::string method = std::string(to_string(CamMethod::smooth_grad_cam_pp));
    std::size_t class_index = 0;
    std::size_t n_samples = default_n_samples;
    double std_dev = default_std_dev;
    std::string filters;
    bool region = false;
    std::string subset;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string alpha_numerator = std::string(to_string(AlphaNumerator::second_derivative));
    double overlay_alpha = default_overlay_alpha;
    std::string from_manifest;
    CLI::Option* class_option = nullptr;
};

struct GradcheckArgs {
    std::string model;
    std::string image;
    std::string layer;
    std::size_t class_index = 0;
    double step = 1e-5;
    double higher_step = 1e-2;
    CLI::Option* class_option = nullptr;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelError(ModelError::Kind::io, fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw ModelError(ModelError::Kind::io, fmt::format("short write to '{}'", path.string()));
}

CamInvocation invocation_from_args(const CamArgs& a) {
    CamInvocation inv;
    inv.model = a.model;
    inv.image = a.image;
    inv.overlay_alpha = a.overlay_alpha;
    CamRequest& req = inv.request;
    req.layer_name = a.layer;
    const auto method = parse_cam_method(a.method);
    if (!method) throw RequestError(fmt::format("unknown method '{}'", a.method));
    req.method = *method;
    if (a.class_option->count() > 0) req.class_index = a.class_index;
    req.n_samples = a.n_samples;
    req.std_dev = a.std_dev;
    req.filters = parse_filters(a.filters);
    req.region = a.region;
    req.subset = parse_subset(a.subset);
    req.seed = a.seed;
    const auto numerator = parse_alpha_numerator(a.alpha_numerator);
    if (!numerator) throw RequestError(fmt::format("unknown alpha numerator '{}'", a.alpha_numerator));
    req.alpha_numerator = *numerator;
    return inv;
}

int run_cam(const CamArgs& args, std::ostream& out, std::ostream& err) {
    const CamInvocation inv = args.from_manifest.empty() ? invocation_from_args(args)
                                                         : invocation_from_manifest(RunManifest::read(args.from_manifest));
    const CamRequest& req = inv.request;
    if (!(inv.overlay_alpha >= 0.0 && inv.overlay_alpha <= 1.0)) {
        throw RequestError(fmt::format("overlay alpha {} outside [0,1]", inv.overlay_alpha));
    }

    const Model model = load_model(inv.model);
    const RgbImage image = decode_png(inv.image);
    const Tensor input = preprocess(image, model.input_spec());
    const CamAnalysis analysis = analyze(model, input, req);

    const std::size_t height = model.input_spec().height;
    const std::size_t width = model.input_spec().width;
    const RgbImage base = resize_image(image, height, width);

    const std::filesystem::path dir = args.out_dir;
    std::filesystem::create_directories(dir);

    std::vector<std::vector<std::size_t>> groups;
    if (req.filters.empty()) {
        groups.emplace_back();
    } else {
        for (std::size_t k : req.filters) groups.push_back({k});
    }

    RunManifest manifest;
    manifest.set("format", "smoothcam-run 1");
    manifest.set("model", inv.model.string());
    manifest.set("image", inv.image.string());
    manifest.set("layer", req.layer_name);
    manifest.set("method", std::string(to_string(req.method)));
    manifest.set("class", std::to_string(analysis.class_index));
    manifest.set("class_label", model.classes().at(analysis.class_index));
    manifest.set("class_source", req.class_index ? "flag" : "argmax");
    manifest.set("score", fmt::format("{}", analysis.score));
    manifest.set("nsamples", std::to_string(req.n_samples));
    manifest.set("std_dev", fmt::format("{}", req.std_dev));
    manifest.set("noise_sigma", fmt::format("{}", req.std_dev * (input.max() - input.min())));
    manifest.set("seed", std::to_string(req.seed));
    manifest.set("filters", format_filters(req.filters));
    if (!req.filters.empty()) {
        const auto [lo, hi] = std::minmax_element(req.filters.begin(), req.filters.end());
        manifest.set("filter_bounds", fmt::format("[{},{}]", *lo, *hi));
    }
    manifest.set("feature_maps", std::to_string(analysis.activation.dim(0)));
    manifest.set("layer_extent", fmt::format("{}x{}", analysis.activation.dim(1), analysis.activation.dim(2)));
    manifest.set("region", req.region ? "true" : "false");
    manifest.set("subset", format_subset(req.subset));
    manifest.set("alpha_numerator", std::string(to_string(req.alpha_numerator)));
    manifest.set("overlay_alpha", fmt::format("{}", inv.overlay_alpha));
    manifest.set("output_extent", fmt::format("{}x{}", height, width));

    bool numeric_failure = false;
    for (const auto& group : groups) {
        const std::string suffix = group.empty() ? "" : fmt::format("_k{}", group.front());
        const Tensor raw =
            combine_feature_maps(analysis.activation, analysis.weights, group, req.subset, req.region, true);
        const SaliencyMap map = render_from_analysis(model, analysis, req, group);
        if (!raw.all_finite() || !map.values.all_finite()) {
            err << fmt::format("error: non-finite values in the saliency map{}\n", suffix);
            numeric_failure = true;
            continue;
        }
        const RgbImage heat = render_heatmap(map.values);
        const std::string heat_name = "heatmap" + suffix + ".png";
        const std::string overlay_name = "overlay" + suffix + ".png";
        const std::string raw_name = "raw_map" + suffix + ".txt";
        encode_png(heat, dir / heat_name);
        encode_png(overlay(base, heat, inv.overlay_alpha), dir / overlay_name);
        write_text(dir / raw_name, format_grid(raw));
        const std::string key = group.empty() ? "map" : fmt::format("map_k{}", group.front());
        manifest.set(key, fmt::format("{} {} {} zero_map={}", heat_name, overlay_name, raw_name,
                                      map.meta.zero_map ? "true" : "false"));
        out << fmt::format("wrote {}{}\n", (dir / heat_name).string(), map.meta.zero_map ? " (zero map)" : "");
    }
    write_text(dir / "run_manifest.txt", manifest.str());
    out << fmt::format("class {} ({}) score {}\n", analysis.class_index, model.classes().at(analysis.class_index),
                       analysis.score);
    return numeric_failure ? exit_numeric : exit_ok;
}

int run_inspect(const std::string& model_path, std::ostream& out) {
    const Model model = load_model(model_path);
    out << format_summary(summarize(model));
    return exit_ok;
}

int run_gradcheck_command(const GradcheckArgs& args, std::ostream& out, const BuildOptions& build) {
    const Model model = load_model(args.model);
    const Tensor input = preprocess(decode_png(args.image), model.input_spec());
    std::size_t class_index = args.class_index;
    if (args.class_option->count() == 0) {
        const Tensor scores = infer(model, input);
        class_index = static_cast<std::size_t>(std::max_element(scores.values().begin(), scores.values().end()) -
                                               scores.values().begin());
    }
    GradcheckOptions options;
    options.step = args.step;
    options.higher_step = args.higher_step;
    options.corrupt_gradient = build.corrupt_gradient;
    const GradcheckReport report = run_gradcheck(model, input, args.layer, class_index, options);
    out << format_gradcheck(report, options);
    return report.passed ? exit_ok : exit_numeric;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const BuildOptions& build) {
    CLI::App app{"Grad-CAM, Grad-CAM++ and Smooth Grad-CAM++ saliency maps for sequential CNNs", "smoothcam"};
    app.require_subcommand(1);

    CamArgs cam;
    auto* cam_cmd = app.add_subcommand("cam", "Compute a saliency map and write heatmap, overlay, raw grid and run manifest");
    cam_cmd->add_option("--model", cam.model, "Model file (.camf)");
    cam_cmd->add_option("--image", cam.image, "Input image (8-bit PNG)");
    cam_cmd->add_option("--layer", cam.layer, "Name of the layer to visualize");
    cam_cmd->add_option("--method", cam.method, "grad-cam | grad-cam++ | smooth-grad-cam++")
        ->check(CLI::IsMember({"grad-cam", "grad-cam++", "smooth-grad-cam++"}))
        ->capture_default_str();
    cam.class_option = cam_cmd->add_option("--class", cam.class_index, "Target class index (default: predicted class)");
    cam_cmd->add_option("--nsamples", cam.n_samples, "Number of noised samples (0: clean input only)")
        ->capture_default_str();
    cam_cmd->add_option("--std-dev", cam.std_dev, "Noise level as a fraction of the input range")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cam_cmd->add_option("--filters", cam.filters, "Comma-separated feature-map indices; one map per index");
    cam_cmd->add_flag("--region", cam.region, "Treat the two subset coordinates as inclusive rectangle corners");
    cam_cmd->add_option("--subset", cam.subset, "Neuron coordinates, e.g. \"(0,10);(12,12)\"");
    cam_cmd->add_option("--seed", cam.seed, "Noise seed")->capture_default_str();
    cam_cmd->add_option("--out-dir", cam.out_dir, "Output directory")->capture_default_str();
    cam_cmd->add_option("--alpha-numerator", cam.alpha_numerator, "second-derivative | first-derivative")
        ->check(CLI::IsMember({"second-derivative", "first-derivative"}))
        ->capture_default_str();
    cam_cmd->add_option("--overlay-alpha", cam.overlay_alpha, "Heatmap weight in the overlay")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    auto* from_manifest =
        cam_cmd->add_option("--from-manifest", cam.from_manifest, "Re-run the invocation recorded in a run manifest");
    for (const char* name : {"--model", "--image", "--layer", "--method", "--class", "--nsamples", "--std-dev",
                             "--filters", "--region", "--subset", "--seed", "--alpha-numerator", "--overlay-alpha"}) {
        from_manifest->excludes(cam_cmd->get_option(name));
    }

    std::string inspect_model;
    auto* inspect_cmd = app.add_subcommand("inspect", "Print the layer summary of a model");
    inspect_cmd->add_option("--model", inspect_model, "Model file (.camf)")->required();

    GradcheckArgs gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic derivatives with finite differences");
    gc_cmd->add_option("--model", gc.model, "Model file (.camf)")->required();
    gc_cmd->add_option("--image", gc.image, "Input image (8-bit PNG)")->required();
    gc_cmd->add_option("--layer", gc.layer, "Layer whose activations are perturbed")->required();
    gc.class_option = gc_cmd->add_option("--class", gc.class_index, "Target class index (default: predicted class)");
    gc_cmd->add_option("--step", gc.step, "First-order step")->check(CLI::PositiveNumber)->capture_default_str();
    gc_cmd->add_option("--higher-step", gc.higher_step, "Upper bound on the higher-order step")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    try {
        app.parse(argc, argv);
        if (*cam_cmd && cam.from_manifest.empty()) {
            for (const char* name : {"--model", "--image", "--layer"}) {
                if (cam_cmd->get_option(name)->count() == 0) {
                    throw CLI::RequiredError(std::string(name) + " is required");
                }
            }
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*cam_cmd) return run_cam(cam, out, err);
        if (*inspect_cmd) return run_inspect(inspect_model, out);
        if (*gc_cmd) return run_gradcheck_command(gc, out, build);
    } catch (const RequestError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ModelError& e) {
        err << "error: " << e.what() << '\n';
        return exit_model_or_file;
    } catch (const ImageError& e) {
        err << "error: " << e.what() << '\n';
        return exit_model_or_file;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_model_or_file;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_model_or_file;
    }
    return exit_usage;
}

}  // namespace smoothcam::cli
