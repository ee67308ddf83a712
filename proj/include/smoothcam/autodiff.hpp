#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "smoothcam/model.hpp"
#include "smoothcam/tensor.hpp"

namespace smoothcam {

/// Cached forward pass. `outputs[i]` is the output of layer i; the traced
/// activation is the output of `target_layer`, which is the named layer
/// advanced past any directly following relu layers so that gradients are
/// taken with respect to post-ReLU feature maps.
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> outputs;
    std::vector<std::vector<std::size_t>> argmax;
    std::string layer_name;
    std::size_t target_layer = 0;
    Tensor scores;

    const Tensor& activation() const { return outputs.at(target_layer); }
    /// Input of layer i (the network input for layer 0).
    const Tensor& layer_input(std::size_t i) const { return i == 0 ? input : outputs.at(i - 1); }
};

/// Per-feature-map derivatives of Y^c = exp(S^c - shift) w.r.t. the traced
/// activation: first, second and third order, all [K,H,W].
struct DerivativeMaps {
    Tensor d1;
    Tensor d2;
    Tensor d3;
    double score = 0.0;
};

/// Index of the layer whose output is visualized for `layer_name`; throws
/// RequestError listing the valid names when the name is unknown.
std::size_t resolve_activation_layer(const Model& model, std::string_view layer_name);

Tensor apply_layer(const Model& model, std::size_t index, const Tensor& input,
                   std::vector<std::size_t>* argmax = nullptr);

/// Plain inference: class scores (pre-softmax logits).
Tensor infer(const Model& model, const Tensor& input);

ForwardTrace forward_to(const Model& model, const Tensor& input, std::string_view layer_name);

/// Scores obtained by feeding `activation` in place of the traced layer's output.
Tensor run_tail(const Model& model, std::size_t target_layer, const Tensor& activation);

/// dS^c/dA for the traced activation by reverse traversal of the tail.
Tensor grad_score_wrt_activation(const ForwardTrace& trace, const Model& model, std::size_t class_index);

/// D_m = exp(shifted_score) * g^m, m = 1..3. Exact for piecewise-linear tails,
/// where every higher derivative of S^c vanishes.
DerivativeMaps higher_order_maps(const Tensor& grad, double shifted_score);

Tensor finite_diff_grad(const Model& model, const Tensor& input, std::string_view layer_name,
                        std::size_t class_index, double step);
Tensor finite_diff_grad(const ForwardTrace& trace, const Model& model, std::size_t class_index, double step);

/// Central-difference gradient together with a per-entry flag marking points
/// where the forward and backward one-sided slopes disagree (a ReLU or
/// max-pool kink lies within the step).
struct FiniteDiffProbe {
    Tensor gradient;
    std::vector<bool> near_kink;
    std::size_t kink_count() const;
};

FiniteDiffProbe finite_diff_probe(const ForwardTrace& trace, const Model& model, std::size_t class_index,
                                  double step);

/// Second and third central differences of exp(S^c(A + t e_k) - shift) at
/// t = 0, one activation entry at a time. The step for entry k is
/// min(max_step, 0.01 / |s_k|), where s_k is a central-difference estimate of
/// the slope, so the exponent moves by about 0.01 per step whatever the
/// gradient scale. Entries where S^c is not linear across the five probe
/// points (a kink lies inside the stencil) are flagged.
struct HigherOrderDiff {
    Tensor d2;
    Tensor d3;
    std::vector<bool> near_kink;
    std::size_t kink_count() const;
};

HigherOrderDiff finite_diff_higher_order(const ForwardTrace& trace, const Model& model, std::size_t class_index,
                                         double max_step, double shift);

}  // namespace smoothcam
