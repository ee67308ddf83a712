#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smoothcam/autodiff.hpp"
#include "smoothcam/model.hpp"
#include "smoothcam/tensor.hpp"

namespace smoothcam {

enum class CamMethod { grad_cam, grad_cam_pp, smooth_grad_cam_pp };

std::string_view to_string(CamMethod method);
std::optional<CamMethod> parse_cam_method(std::string_view text);

/// Numerator of the per-location weight alpha. The default uses the averaged
/// second derivative, matching the single-sample Grad-CAM++ weight; the
/// alternative uses the averaged first derivative, as the smoothed formula is
/// sometimes printed. Both share the denominator 2*D2 + sum(A)*D3.
enum class AlphaNumerator { second_derivative, first_derivative };

std::string_view to_string(AlphaNumerator numerator);
std::optional<AlphaNumerator> parse_alpha_numerator(std::string_view text);

inline constexpr std::size_t default_n_samples = 0;
inline constexpr double default_std_dev = 0.15;
inline constexpr double alpha_denominator_floor = 1e-12;

/// (row, column) of a neuron in a feature map.
struct Coord {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Coord&, const Coord&) = default;
};

struct CamRequest {
    std::string layer_name;
    std::optional<std::size_t> class_index;  // empty: argmax of the clean-input scores
    std::size_t n_samples = default_n_samples;
    double std_dev = default_std_dev;        // fraction of the clean input's (max - min)
    std::vector<std::size_t> filters;        // empty: all feature maps
    bool region = false;
    std::vector<Coord> subset;
    std::uint64_t seed = 0;
    CamMethod method = CamMethod::smooth_grad_cam_pp;
    AlphaNumerator alpha_numerator = AlphaNumerator::second_derivative;
};

struct SaliencyMetadata {
    CamMethod method = CamMethod::grad_cam;
    std::size_t class_index = 0;
    std::string class_label;
    double score = 0.0;
    std::string layer_name;
    std::size_t n_samples = 0;
    double std_dev = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> filters;
    bool region = false;
    std::vector<Coord> subset;
    bool zero_map = false;
};

/// Input-resolution map with values in [0,1]; max is exactly 1 unless
/// `meta.zero_map` is set, in which case every value is 0.
struct SaliencyMap {
    Tensor values;
    SaliencyMetadata meta;
};

/// Everything computed before the feature maps are combined.
struct CamAnalysis {
    std::size_t class_index = 0;
    double score = 0.0;
    std::size_t target_layer = 0;
    Tensor activation;     // clean-input A, [K,H,W]
    Tensor gradient;       // clean-input dS/dA
    DerivativeMaps averaged;  // D1, D2, D3 averaged over samples (empty for grad-cam)
    Tensor alpha;          // empty for grad-cam
    std::vector<double> weights;  // one per feature map
};

/// Noised copies img + N(0, (sigma * (max(img) - min(img)))^2), generated in a
/// fixed sequence from `seed`. n == 0 returns just the clean image.
std::vector<Tensor> sample_noised_inputs(const Tensor& img, std::size_t n, double std_dev, std::uint64_t seed);

Tensor alpha_from_derivatives(const Tensor& d1, const Tensor& d2, const Tensor& d3, const Tensor& activation,
                              AlphaNumerator numerator = AlphaNumerator::second_derivative);

/// Derivative maps averaged over `samples`, each computed from its own trace
/// and class score. Scores are shifted by their maximum before
/// exponentiation; the common factor cancels in alpha and in the normalized map.
DerivativeMaps averaged_derivative_maps(const Model& model, std::span<const Tensor> samples,
                                        std::string_view layer_name, std::size_t class_index);

/// Validates `req` against the model and computes the per-feature-map weights.
CamAnalysis analyze(const Model& model, const Tensor& img, const CamRequest& req);

/// Keeps the listed neurons (region = false) or the inclusive rectangle spanned
/// by two corner coordinates (region = true); everything else becomes 0.
Tensor apply_neuron_mask(const Tensor& feature_map, std::span<const Coord> subset, bool region);

/// sum_k weights[k] * mask(A^k) over `filters` (all maps when empty), at the
/// activation's resolution; ReLU applied when `rectify`.
Tensor combine_feature_maps(const Tensor& activation, std::span<const double> weights,
                            std::span<const std::size_t> filters, std::span<const Coord> subset, bool region,
                            bool rectify = true);

SaliencyMap normalize_and_upsample(const Tensor& raw, std::size_t height, std::size_t width);

SaliencyMap grad_cam(const Model& model, const Tensor& img, CamRequest req);
SaliencyMap grad_cam_plus_plus(const Model& model, const Tensor& img, CamRequest req);
SaliencyMap smooth_grad_cam_pp(const Model& model, const Tensor& img, CamRequest req);

/// Dispatches on req.method; one map over the selected filters.
SaliencyMap compute_cam(const Model& model, const Tensor& img, const CamRequest& req);

/// One map per entry of req.filters (all feature maps when empty would be K
/// maps, so an empty list yields a single combined map instead).
std::vector<SaliencyMap> compute_cam_per_filter(const Model& model, const Tensor& img, const CamRequest& req);

/// Map from a finished analysis; exposed so several maps can share one analysis.
SaliencyMap render_from_analysis(const Model& model, const CamAnalysis& analysis, const CamRequest& req,
                                 std::span<const std::size_t> filters);

}  // namespace smoothcam
