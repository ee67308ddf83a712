#include "smoothcam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include <fmt/format.h>

namespace smoothcam {

std::string_view to_string(CamMethod method) {
    switch (method) {
        case CamMethod::grad_cam: return "grad-cam";
        case CamMethod::grad_cam_pp: return "grad-cam++";
        case CamMethod::smooth_grad_cam_pp: return "smooth-grad-cam++";
    }
    return "?";
}

std::optional<CamMethod> parse_cam_method(std::string_view text) {
    for (auto m : {CamMethod::grad_cam, CamMethod::grad_cam_pp, CamMethod::smooth_grad_cam_pp}) {
        if (to_string(m) == text) return m;
    }
    return std::nullopt;
}

std::string_view to_string(AlphaNumerator numerator) {
    return numerator == AlphaNumerator::second_derivative ? "second-derivative" : "first-derivative";
}

std::optional<AlphaNumerator> parse_alpha_numerator(std::string_view text) {
    if (text == "second-derivative") return AlphaNumerator::second_derivative;
    if (text == "first-derivative") return AlphaNumerator::first_derivative;
    return std::nullopt;
}

std::vector<Tensor> sample_noised_inputs(const Tensor& img, std::size_t n, double std_dev, std::uint64_t seed) {
    if (!(std_dev >= 0.0) || !std::isfinite(std_dev)) {
        throw RequestError(fmt::format("noise std-dev must be a finite value >= 0, got {}", std_dev));
    }
    if (n == 0) return {img};
    const double sigma = std_dev * (img.max() - img.min());
    std::vector<Tensor> samples(n, img);
    if (sigma == 0.0) return samples;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Tensor& s : samples) {
        for (double& v : s.values()) v += noise(rng);
    }
    return samples;
}

Tensor alpha_from_derivatives(const Tensor& d1, const Tensor& d2, const Tensor& d3, const Tensor& activation,
                              AlphaNumerator numerator) {
    const auto& shape = activation.shape();
    if (activation.rank() != 3 || d1.shape() != shape || d2.shape() != shape || d3.shape() != shape) {
        throw ShapeError(fmt::format("derivative maps {}/{}/{} do not match activation {}", shape_string(d1.shape()),
                                     shape_string(d2.shape()), shape_string(d3.shape()), shape_string(shape)));
    }
    const std::size_t maps = shape[0];
    const std::size_t plane = shape[1] * shape[2];
    const Tensor& top = numerator == AlphaNumerator::second_derivative ? d2 : d1;

    Tensor alpha(shape);
    for (std::size_t k = 0; k < maps; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < plane; ++i) total += activation[k * plane + i];
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = k * plane + i;
            const double denominator = 2.0 * d2[idx] + total * d3[idx];
            alpha[idx] = std::abs(denominator) < alpha_denominator_floor ? 0.0 : top[idx] / denominator;
        }
    }
    return alpha;
}

DerivativeMaps averaged_derivative_maps(const Model& model, std::span<const Tensor> samples,
                                        std::string_view layer_name, std::size_t class_index) {
    if (samples.empty()) throw RequestError("no input samples");
    struct SampleResult {
        Tensor grad;
        double score = 0.0;
    };
    std::vector<SampleResult> results(samples.size());
    auto evaluate = [&](std::size_t i) {
        const ForwardTrace trace = forward_to(model, samples[i], layer_name);
        results[i] = {grad_score_wrt_activation(trace, model, class_index), trace.scores[class_index]};
    };

    const std::size_t workers =
        std::min<std::size_t>(samples.size(), std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < samples.size(); ++i) evaluate(i);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        {
            std::vector<std::jthread> pool;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = w; i < samples.size(); i += workers) evaluate(i);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            }
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    double reference = results.front().score;
    for (const auto& r : results) reference = std::max(reference, r.score);

    const Tensor::Shape& shape = results.front().grad.shape();
    DerivativeMaps mean{Tensor(shape), Tensor(shape), Tensor(shape), reference};
    for (const auto& r : results) {
        const DerivativeMaps maps = higher_order_maps(r.grad, r.score - reference);
        for (std::size_t i = 0; i < mean.d1.size(); ++i) {
            mean.d1[i] += maps.d1[i];
            mean.d2[i] += maps.d2[i];
            mean.d3[i] += maps.d3[i];
        }
    }
    const auto n = static_cast<double>(results.size());
    for (std::size_t i = 0; i < mean.d1.size(); ++i) {
        mean.d1[i] /= n;
        mean.d2[i] /= n;
        mean.d3[i] /= n;
    }
    return mean;
}

namespace {

void check_request(const Model& model, const CamRequest& req, const Tensor& activation) {
    if (activation.rank() != 3) {
        throw RequestError(fmt::format("layer '{}' produces {}; a [K,H,W] feature-map layer is required",
                                       req.layer_name, shape_string(activation.shape())));
    }
    if (req.class_index && *req.class_index >= model.class_count()) {
        throw RequestError(fmt::format("class {} out of range: model has {} classes", *req.class_index,
                                       model.class_count()));
    }
    if (!(req.std_dev >= 0.0) || !std::isfinite(req.std_dev)) {
        throw RequestError(fmt::format("noise std-dev must be a finite value >= 0, got {}", req.std_dev));
    }
    const std::size_t maps = activation.dim(0);
    for (std::size_t k : req.filters) {
        if (k >= maps) {
            throw RequestError(fmt::format("filter {} out of range: layer '{}' has {} feature maps", k,
                                           req.layer_name, maps));
        }
    }
    if (req.region && req.subset.size() != 2) {
        throw RequestError(fmt::format("region mode needs exactly two corner coordinates, got {}", req.subset.size()));
    }
    for (const Coord& c : req.subset) {
        if (c.row >= activation.dim(1) || c.col >= activation.dim(2)) {
            throw RequestError(fmt::format("subset coordinate ({},{}) outside layer '{}' extent {}x{}", c.row, c.col,
                                           req.layer_name, activation.dim(1), activation.dim(2)));
        }
    }
}

std::size_t argmax(const Tensor& scores) {
    return static_cast<std::size_t>(std::max_element(scores.values().begin(), scores.values().end()) -
                                    scores.values().begin());
}

}  // namespace

CamAnalysis analyze(const Model& model, const Tensor& img, const CamRequest& req) {
    const ForwardTrace clean = forward_to(model, img, req.layer_name);
    check_request(model, req, clean.activation());

    CamAnalysis out;
    out.class_index = req.class_index.value_or(argmax(clean.scores));
    out.score = clean.scores[out.class_index];
    out.target_layer = clean.target_layer;
    out.activation = clean.activation();
    out.gradient = grad_score_wrt_activation(clean, model, out.class_index);

    const std::size_t maps = out.activation.dim(0);
    const std::size_t plane = out.activation.dim(1) * out.activation.dim(2);
    out.weights.assign(maps, 0.0);

    if (req.method == CamMethod::grad_cam) {
        for (std::size_t k = 0; k < maps; ++k) {
            double total = 0.0;
            for (std::size_t i = 0; i < plane; ++i) total += out.gradient[k * plane + i];
            out.weights[k] = total / static_cast<double>(plane);
        }
        return out;
    }

    const std::vector<Tensor> samples = req.method == CamMethod::smooth_grad_cam_pp
                                            ? sample_noised_inputs(img, req.n_samples, req.std_dev, req.seed)
                                            : std::vector<Tensor>{img};
    out.averaged = averaged_derivative_maps(model, samples, req.layer_name, out.class_index);
    out.alpha = alpha_from_derivatives(out.averaged.d1, out.averaged.d2, out.averaged.d3, out.activation,
                                       req.alpha_numerator);
    for (std::size_t k = 0; k < maps; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t idx = k * plane + i;
            total += out.alpha[idx] * std::max(out.averaged.d1[idx], 0.0);
        }
        out.weights[k] = total;
    }
    return out;
}

Tensor apply_neuron_mask(const Tensor& feature_map, std::span<const Coord> subset, bool region) {
    if (feature_map.rank() != 2) {
        throw ShapeError("neuron mask expects an [H,W] feature map, got " + shape_string(feature_map.shape()));
    }
    if (subset.empty()) return feature_map;
    const std::size_t height = feature_map.dim(0);
    const std::size_t width = feature_map.dim(1);
    for (const Coord& c : subset) {
        if (c.row >= height || c.col >= width) {
            throw RequestError(fmt::format("subset coordinate ({},{}) outside feature map extent {}x{}", c.row, c.col,
                                           height, width));
        }
    }
    Tensor masked({height, width});
    if (region) {
        if (subset.size() != 2) {
            throw RequestError(fmt::format("region mode needs exactly two corner coordinates, got {}", subset.size()));
        }
        const auto [r0, r1] = std::minmax(subset[0].row, subset[1].row);
        const auto [c0, c1] = std::minmax(subset[0].col, subset[1].col);
        for (std::size_t r = r0; r <= r1; ++r) {
            for (std::size_t c = c0; c <= c1; ++c) masked.at(r, c) = feature_map.at(r, c);
        }
    } else {
        for (const Coord& c : subset) masked.at(c.row, c.col) = feature_map.at(c.row, c.col);
    }
    return masked;
}

Tensor combine_feature_maps(const Tensor& activation, std::span<const double> weights,
                            std::span<const std::size_t> filters, std::span<const Coord> subset, bool region,
                            bool rectify) {
    if (activation.rank() != 3 || weights.size() != activation.dim(0)) {
        throw ShapeError(fmt::format("{} weights for activation {}", weights.size(),
                                     shape_string(activation.shape())));
    }
    std::vector<std::size_t> selected(filters.begin(), filters.end());
    if (selected.empty()) {
        selected.resize(activation.dim(0));
        for (std::size_t k = 0; k < selected.size(); ++k) selected[k] = k;
    }
    Tensor raw({activation.dim(1), activation.dim(2)});
    for (std::size_t k : selected) {
        if (k >= activation.dim(0)) {
            throw RequestError(fmt::format("filter {} out of range: {} feature maps", k, activation.dim(0)));
        }
        const Tensor masked = apply_neuron_mask(activation.channel(k), subset, region);
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] += weights[k] * masked[i];
    }
    if (rectify) raw = relu(raw);
    return raw;
}

SaliencyMap normalize_and_upsample(const Tensor& raw, std::size_t height, std::size_t width) {
    SaliencyMap map;
    const double peak = raw.max();
    if (!(peak > 0.0)) {
        map.values = Tensor({height, width});
        map.meta.zero_map = true;
        return map;
    }
    Tensor scaled = raw;
    for (double& v : scaled.values()) v = std::max(v, 0.0) / peak;
    map.values = bilinear_resize(scaled, height, width);
    // Interpolation can miss the peak when it falls between output pixel
    // centres; rescale so the rendered map still reaches 1.
    const double resized_peak = map.values.max();
    if (!(resized_peak > 0.0)) {
        map.values = Tensor({height, width});
        map.meta.zero_map = true;
        return map;
    }
    for (double& v : map.values.values()) {
        if (resized_peak != 1.0) v /= resized_peak;
        v = std::clamp(v, 0.0, 1.0);
    }
    return map;
}

SaliencyMap render_from_analysis(const Model& model, const CamAnalysis& analysis, const CamRequest& req,
                                 std::span<const std::size_t> filters) {
    const Tensor raw =
        combine_feature_maps(analysis.activation, analysis.weights, filters, req.subset, req.region, true);
    SaliencyMap map = normalize_and_upsample(raw, model.input_spec().height, model.input_spec().width);
    SaliencyMetadata& m = map.meta;
    m.method = req.method;
    m.class_index = analysis.class_index;
    m.class_label = model.classes().at(analysis.class_index);
    m.score = analysis.score;
    m.layer_name = req.layer_name;
    m.n_samples = req.n_samples;
    m.std_dev = req.std_dev;
    m.seed = req.seed;
    m.filters.assign(filters.begin(), filters.end());
    m.region = req.region;
    m.subset = req.subset;
    return map;
}

SaliencyMap compute_cam(const Model& model, const Tensor& img, const CamRequest& req) {
    const CamAnalysis analysis = analyze(model, img, req);
    return render_from_analysis(model, analysis, req, req.filters);
}

std::vector<SaliencyMap> compute_cam_per_filter(const Model& model, const Tensor& img, const CamRequest& req) {
    const CamAnalysis analysis = analyze(model, img, req);
    std::vector<SaliencyMap> maps;
    if (req.filters.empty()) {
        maps.push_back(render_from_analysis(model, analysis, req, {}));
        return maps;
    }
    for (std::size_t k : req.filters) {
        const std::size_t single[] = {k};
        maps.push_back(render_from_analysis(model, analysis, req, single));
    }
    return maps;
}

SaliencyMap grad_cam(const Model& model, const Tensor& img, CamRequest req) {
    req.method = CamMethod::grad_cam;
    return compute_cam(model, img, req);
}

SaliencyMap grad_cam_plus_plus(const Model& model, const Tensor& img, CamRequest req) {
    req.method = CamMethod::grad_cam_pp;
    return compute_cam(model, img, req);
}

SaliencyMap smooth_grad_cam_pp(const Model& model, const Tensor& img, CamRequest req) {
    req.method = CamMethod::smooth_grad_cam_pp;
    return compute_cam(model, img, req);
}

}  // namespace smoothcam
