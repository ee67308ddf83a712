#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "smoothcam/model.hpp"
#include "smoothcam/tensor.hpp"

namespace smoothcam {

struct GradcheckOptions {
    double step = 1e-5;             // first-order central-difference step
    double higher_step = 1e-2;      // upper bound on the higher-order stencil step
    double first_order_tolerance = 1e-4;
    double higher_order_tolerance = 1e-2;
    // Negative control: perturbs the analytic gradient before comparison.
    bool corrupt_gradient = false;
};

struct GradcheckReport {
    std::size_t class_index = 0;
    std::size_t entries = 0;
    std::size_t first_order_kinks = 0;
    std::size_t higher_order_kinks = 0;
    double first_order_error = 0.0;
    double second_order_error = 0.0;
    double third_order_error = 0.0;
    bool passed = false;
};

/// |a - b| / max(|a|, |b|, 1e-3 * max|reference|), maximised over entries not
/// flagged in `skip`. The floor keeps entries that are negligible relative to
/// the largest derivative from dominating through cancellation noise.
double max_relative_error(const Tensor& reference, const Tensor& estimate, const std::vector<bool>& skip);

/// Compares reverse-mode dS/dA and the exponential-score D2, D3 maps against
/// finite differences of the tail for one layer and class. Entries where a
/// kink lies within the stencil are excluded and counted.
GradcheckReport run_gradcheck(const Model& model, const Tensor& input, std::string_view layer_name,
                              std::size_t class_index, const GradcheckOptions& options = {});

std::string format_gradcheck(const GradcheckReport& report, const GradcheckOptions& options);

}  // namespace smoothcam
