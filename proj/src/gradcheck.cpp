#include "smoothcam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "smoothcam/autodiff.hpp"

namespace smoothcam {

double max_relative_error(const Tensor& reference, const Tensor& estimate, const std::vector<bool>& skip) {
    if (reference.shape() != estimate.shape()) {
        throw ShapeError(fmt::format("cannot compare {} with {}", shape_string(reference.shape()),
                                     shape_string(estimate.shape())));
    }
    double scale = 0.0;
    for (double v : reference.values()) scale = std::max(scale, std::abs(v));
    const double floor = 1e-3 * scale;
    double worst = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (i < skip.size() && skip[i]) continue;
        const double diff = std::abs(reference[i] - estimate[i]);
        if (diff == 0.0) continue;
        const double denom = std::max({std::abs(reference[i]), std::abs(estimate[i]), floor});
        worst = std::max(worst, diff / denom);
    }
    return worst;
}

GradcheckReport run_gradcheck(const Model& model, const Tensor& input, std::string_view layer_name,
                              std::size_t class_index, const GradcheckOptions& options) {
    if (!(options.step > 0.0) || !(options.higher_step > 0.0)) {
        throw RequestError("finite-difference steps must be positive");
    }
    const ForwardTrace trace = forward_to(model, input, layer_name);
    Tensor grad = grad_score_wrt_activation(trace, model, class_index);
    if (options.corrupt_gradient) {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= 1.0 + 0.01 * static_cast<double>(i % 3 + 1);
    }

    GradcheckReport report;
    report.class_index = class_index;
    report.entries = grad.size();

    const FiniteDiffProbe probe = finite_diff_probe(trace, model, class_index, options.step);
    report.first_order_kinks = probe.kink_count();
    report.first_order_error = max_relative_error(grad, probe.gradient, probe.near_kink);

    // Y = exp(S - S_c) so the maps are O(g^m) regardless of the logit scale.
    const double shift = trace.scores[class_index];
    const DerivativeMaps maps = higher_order_maps(grad, 0.0);
    const HigherOrderDiff numeric = finite_diff_higher_order(trace, model, class_index, options.higher_step, shift);
    report.higher_order_kinks = numeric.kink_count();
    report.second_order_error = max_relative_error(maps.d2, numeric.d2, numeric.near_kink);
    report.third_order_error = max_relative_error(maps.d3, numeric.d3, numeric.near_kink);

    report.passed = report.first_order_error < options.first_order_tolerance &&
                    report.second_order_error < options.higher_order_tolerance &&
                    report.third_order_error < options.higher_order_tolerance;
    return report;
}

std::string format_gradcheck(const GradcheckReport& r, const GradcheckOptions& o) {
    std::string out;
    out += fmt::format("class: {}\n", r.class_index);
    out += fmt::format("entries: {}\n", r.entries);
    out += fmt::format("first_order_max_rel_error: {:.3e} (threshold {:.0e}, kinks skipped {})\n", r.first_order_error,
                       o.first_order_tolerance, r.first_order_kinks);
    out += fmt::format("second_order_max_rel_error: {:.3e} (threshold {:.0e}, kinks skipped {})\n",
                       r.second_order_error, o.higher_order_tolerance, r.higher_order_kinks);
    out += fmt::format("third_order_max_rel_error: {:.3e} (threshold {:.0e}, kinks skipped {})\n", r.third_order_error,
                       o.higher_order_tolerance, r.higher_order_kinks);
    out += fmt::format("result: {}\n", r.passed ? "PASS" : "FAIL");
    return out;
}

}  // namespace smoothcam
