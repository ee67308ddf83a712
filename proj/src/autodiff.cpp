#include "smoothcam/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace smoothcam {

std::size_t resolve_activation_layer(const Model& model, std::string_view layer_name) {
    const auto found = model.find_layer(layer_name);
    if (!found) {
        throw RequestError(fmt::format("unknown layer '{}'; valid layers: {}", layer_name,
                                       fmt::join(model.layer_names(), ", ")));
    }
    std::size_t index = *found;
    while (index + 1 < model.layers().size() && model.layer(index + 1).kind == LayerKind::relu) ++index;
    return index;
}

Tensor apply_layer(const Model& model, std::size_t index, const Tensor& input, std::vector<std::size_t>* argmax) {
    const LayerRecord& layer = model.layer(index);
    const LayerParameters& p = model.parameters(index);
    switch (layer.kind) {
        case LayerKind::conv:
            return conv2d(input, p.weights, p.bias, layer.conv);
        case LayerKind::relu:
            return relu(input);
        case LayerKind::maxpool: {
            PoolResult pooled = maxpool2d(input, layer.pool_window, layer.pool_stride);
            if (argmax) *argmax = std::move(pooled.argmax);
            return std::move(pooled.output);
        }
        case LayerKind::flatten:
            return input.reshaped({input.size()});
        case LayerKind::linear:
            return linear(input, p.weights, p.bias);
        case LayerKind::gap:
            return global_avg_pool(input);
    }
    throw ShapeError("unknown layer kind");
}

namespace {

void check_input(const Model& model, const Tensor& input) {
    if (input.shape() != model.input_shape()) {
        throw ShapeError(fmt::format("input {} does not match model input {}", shape_string(input.shape()),
                                     shape_string(model.input_shape())));
    }
}

void check_class(const Model& model, std::size_t class_index) {
    if (class_index >= model.class_count()) {
        throw RequestError(fmt::format("class {} out of range: model has {} classes", class_index,
                                       model.class_count()));
    }
}

Tensor backward_layer(const Model& model, std::size_t index, const ForwardTrace& trace, const Tensor& grad_out) {
    const LayerRecord& layer = model.layer(index);
    const Tensor& in = trace.layer_input(index);
    switch (layer.kind) {
        case LayerKind::conv:
            return conv2d_backward_input(grad_out, model.parameters(index).weights, layer.conv, in.dim(1), in.dim(2));
        case LayerKind::relu: {
            Tensor g = grad_out;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!(in[i] > 0.0)) g[i] = 0.0;
            }
            return g;
        }
        case LayerKind::maxpool: {
            Tensor g(in.shape());
            const auto& routes = trace.argmax.at(index);
            for (std::size_t o = 0; o < routes.size(); ++o) g[routes[o]] += grad_out[o];
            return g;
        }
        case LayerKind::flatten:
            return grad_out.reshaped(in.shape());
        case LayerKind::linear: {
            const Tensor& w = model.parameters(index).weights;
            const std::size_t rows = w.dim(0);
            const std::size_t cols = w.dim(1);
            Tensor g({cols});
            for (std::size_t r = 0; r < rows; ++r) {
                const double go = grad_out[r];
                if (go == 0.0) continue;
                for (std::size_t c = 0; c < cols; ++c) g[c] += w[r * cols + c] * go;
            }
            return g;
        }
        case LayerKind::gap: {
            const std::size_t plane = in.dim(1) * in.dim(2);
            Tensor g(in.shape());
            for (std::size_t k = 0; k < in.dim(0); ++k) {
                const double share = grad_out[k] / static_cast<double>(plane);
                for (std::size_t i = 0; i < plane; ++i) g[k * plane + i] = share;
            }
            return g;
        }
    }
    throw ShapeError("unknown layer kind");
}

}  // namespace

Tensor infer(const Model& model, const Tensor& input) {
    check_input(model, input);
    Tensor x = input;
    for (std::size_t i = 0; i < model.layers().size(); ++i) x = apply_layer(model, i, x);
    return x;
}

ForwardTrace forward_to(const Model& model, const Tensor& input, std::string_view layer_name) {
    check_input(model, input);
    ForwardTrace trace;
    trace.layer_name = std::string(layer_name);
    trace.target_layer = resolve_activation_layer(model, layer_name);
    trace.input = input;
    const std::size_t n = model.layers().size();
    trace.outputs.reserve(n);
    trace.argmax.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        trace.outputs.push_back(apply_layer(model, i, trace.layer_input(i), &trace.argmax[i]));
    }
    trace.scores = trace.outputs.back();
    return trace;
}

Tensor run_tail(const Model& model, std::size_t target_layer, const Tensor& activation) {
    if (activation.shape() != model.output_shape(target_layer)) {
        throw ShapeError(fmt::format("activation {} does not match layer '{}' output {}",
                                     shape_string(activation.shape()), model.layer(target_layer).name,
                                     shape_string(model.output_shape(target_layer))));
    }
    Tensor x = activation;
    for (std::size_t i = target_layer + 1; i < model.layers().size(); ++i) x = apply_layer(model, i, x);
    return x;
}

Tensor grad_score_wrt_activation(const ForwardTrace& trace, const Model& model, std::size_t class_index) {
    check_class(model, class_index);
    Tensor grad(trace.scores.shape());
    grad[class_index] = 1.0;
    for (std::size_t i = model.layers().size(); i-- > trace.target_layer + 1;) {
        grad = backward_layer(model, i, trace, grad);
    }
    return grad;
}

DerivativeMaps higher_order_maps(const Tensor& grad, double shifted_score) {
    const double scale = std::exp(shifted_score);
    DerivativeMaps maps{grad, grad, grad, shifted_score};
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        const double g2 = g * g;
        maps.d1[i] = scale * g;
        maps.d2[i] = scale * g2;
        maps.d3[i] = scale * (g2 * g);
    }
    return maps;
}

Tensor finite_diff_grad(const Model& model, const Tensor& input, std::string_view layer_name,
                        std::size_t class_index, double step) {
    return finite_diff_grad(forward_to(model, input, layer_name), model, class_index, step);
}

Tensor finite_diff_grad(const ForwardTrace& trace, const Model& model, std::size_t class_index, double step) {
    if (!(step > 0.0)) throw RequestError("finite-difference step must be positive");
    check_class(model, class_index);
    Tensor a = trace.activation();
    Tensor grad(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double original = a[i];
        a[i] = original + step;
        const double up = run_tail(model, trace.target_layer, a)[class_index];
        a[i] = original - step;
        const double down = run_tail(model, trace.target_layer, a)[class_index];
        a[i] = original;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

std::size_t FiniteDiffProbe::kink_count() const {
    return static_cast<std::size_t>(std::count(near_kink.begin(), near_kink.end(), true));
}

FiniteDiffProbe finite_diff_probe(const ForwardTrace& trace, const Model& model, std::size_t class_index,
                                  double step) {
    if (!(step > 0.0)) throw RequestError("finite-difference step must be positive");
    check_class(model, class_index);
    Tensor a = trace.activation();
    const double centre = run_tail(model, trace.target_layer, a)[class_index];
    FiniteDiffProbe probe{Tensor(a.shape()), std::vector<bool>(a.size(), false)};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double original = a[i];
        a[i] = original + step;
        const double up = run_tail(model, trace.target_layer, a)[class_index];
        a[i] = original - step;
        const double down = run_tail(model, trace.target_layer, a)[class_index];
        a[i] = original;
        const double forward = (up - centre) / step;
        const double backward = (centre - down) / step;
        probe.gradient[i] = (up - down) / (2.0 * step);
        const double scale = std::max({1.0, std::abs(forward), std::abs(backward)});
        probe.near_kink[i] = std::abs(forward - backward) > 1e-4 * scale;
    }
    return probe;
}

std::size_t HigherOrderDiff::kink_count() const {
    return static_cast<std::size_t>(std::count(near_kink.begin(), near_kink.end(), true));
}

HigherOrderDiff finite_diff_higher_order(const ForwardTrace& trace, const Model& model, std::size_t class_index,
                                         double max_step, double shift) {
    if (!(max_step > 0.0)) throw RequestError("finite-difference step must be positive");
    check_class(model, class_index);
    Tensor a = trace.activation();
    HigherOrderDiff out{Tensor(a.shape()), Tensor(a.shape()), std::vector<bool>(a.size(), false)};
    auto score = [&](std::size_t i, double original, double t) {
        a[i] = original + t;
        return run_tail(model, trace.target_layer, a)[class_index];
    };
    const double s0 = run_tail(model, trace.target_layer, a)[class_index];
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double original = a[i];
        const double slope = (score(i, original, max_step) - score(i, original, -max_step)) / (2.0 * max_step);
        const double h = std::abs(slope) > 0.0 ? std::min(max_step, 0.01 / std::abs(slope)) : max_step;

        // Stencil t = -2h, -h, 0, h, 2h.
        const std::array<double, 5> s{score(i, original, -2.0 * h), score(i, original, -h), s0,
                                      score(i, original, h), score(i, original, 2.0 * h)};
        a[i] = original;
        const double tolerance = 1e-9 * std::max({1.0, std::abs(s0), std::abs(slope * h)});
        for (std::size_t j = 1; j + 1 < s.size(); ++j) {
            if (std::abs(s[j + 1] - 2.0 * s[j] + s[j - 1]) > tolerance) out.near_kink[i] = true;
        }
        std::array<double, 5> y{};
        for (std::size_t j = 0; j < 5; ++j) y[j] = std::exp(s[j] - shift);
        out.d2[i] = (y[3] - 2.0 * y[2] + y[1]) / (h * h);
        out.d3[i] = (y[4] - 2.0 * y[3] + 2.0 * y[1] - y[0]) / (2.0 * h * h * h);
    }
    return out;
}

}  // namespace smoothcam
