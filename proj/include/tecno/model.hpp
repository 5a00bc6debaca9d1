#pragma once

// Multi-stage causal temporal convolutional network.
//
// A stage is a 1x1 input projection, N dilated residual layers with
// dilations 1, 2, 4, ..., 2^(N-1), and a 1x1 class head. Stage 1 reads the
// frame features; every later stage reads the softmax probabilities of the
// stage before it. Each stage contributes its own weighted cross-entropy
// term, and the training loss is the mean over stages.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tecno/numcore.hpp"

namespace tecno {

struct ArchConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 32;
  std::size_t num_layers = 9;  // dilated residual layers per stage
  std::size_t num_stages = 2;
  std::size_t num_classes = 7;
  static constexpr std::size_t kernel_size = 3;

  /// Throws ConfigError when any field is out of range.
  void validate() const;

  static std::size_t dilation_of_layer(std::size_t layer_index) { return std::size_t{1} << layer_index; }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

template <typename T>
struct ResidualLayer {
  ConvKernel<T> dilated;    // hidden -> hidden, k=3
  ConvKernel<T> pointwise;  // hidden -> hidden, k=1
  friend bool operator==(const ResidualLayer&, const ResidualLayer&) = default;
};

template <typename T>
struct StageParams {
  ConvKernel<T> input_projection;
  std::vector<ResidualLayer<T>> layers;
  ConvKernel<T> output_head;
  friend bool operator==(const StageParams&, const StageParams&) = default;
};

template <typename T>
struct ModelParams {
  ArchConfig config;
  std::vector<StageParams<T>> stages;

  std::size_t parameter_count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Calls fn(std::vector<T>&) on every parameter array in canonical order:
// per stage, input projection (weights, bias), then per layer dilated
// (weights, bias) and pointwise (weights, bias), then the output head
// (weights, bias). Checkpoints and the optimizer both use this order.
template <typename T, typename Fn>
void for_each_array(ModelParams<T>& params, Fn&& fn) {
  for (auto& stage : params.stages) {
    fn(stage.input_projection.weights);
    fn(stage.input_projection.bias);
    for (auto& layer : stage.layers) {
      fn(layer.dilated.weights);
      fn(layer.dilated.bias);
      fn(layer.pointwise.weights);
      fn(layer.pointwise.bias);
    }
    fn(stage.output_head.weights);
    fn(stage.output_head.bias);
  }
}

template <typename T, typename Fn>
void for_each_array(const ModelParams<T>& params, Fn&& fn) {
  for (const auto& stage : params.stages) {
    fn(stage.input_projection.weights);
    fn(stage.input_projection.bias);
    for (const auto& layer : stage.layers) {
      fn(layer.dilated.weights);
      fn(layer.dilated.bias);
      fn(layer.pointwise.weights);
      fn(layer.pointwise.bias);
    }
    fn(stage.output_head.weights);
    fn(stage.output_head.bias);
  }
}

template <typename T>
std::vector<T> flatten(const ModelParams<T>& params);

/// Overwrites every parameter from a flat vector in canonical order.
template <typename T>
void assign_flat(ModelParams<T>& params, std::span<const T> flat);

/// Model with every weight and bias zero; also used as a gradient buffer.
template <typename T>
ModelParams<T> zero_params(const ArchConfig& config);

/// He-uniform fan-in initialization of all conv weights, zero biases.
template <typename T>
ModelParams<T> init_params(const ArchConfig& config, std::uint64_t seed);

/// Element type conversion, e.g. float checkpoints evaluated in double.
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  ModelParams<To> out = zero_params<To>(params.config);
  std::vector<const std::vector<From>*> src;
  for_each_array(params, [&](const std::vector<From>& a) { src.push_back(&a); });
  std::size_t index = 0;
  for_each_array(out, [&](std::vector<To>& a) {
    const auto& s = *src[index++];
    for (std::size_t n = 0; n < a.size(); ++n) a[n] = static_cast<To>(s[n]);
  });
  return out;
}

/// Frames that can influence one output of a stage with `layers` dilated
/// layers of kernel size 3: 2^(layers+1) - 1.
std::uint64_t receptive_field(std::size_t layers);

template <typename T>
struct LayerCache {
  SeqTensor<T> input;           // D_{l-1}
  SeqTensor<T> pre_activation;  // W1 * D_{l-1} + b1
  SeqTensor<T> activation;      // Z_l
};

template <typename T>
struct StageCache {
  SeqTensor<T> input;
  std::vector<LayerCache<T>> layers;
  SeqTensor<T> hidden;  // output of the last residual layer
};

template <typename T>
struct ResidualForward {
  SeqTensor<T> output;
  LayerCache<T> cache;
};

template <typename T>
struct ResidualBackward {
  SeqTensor<T> grad_input;
  ResidualLayer<T> grads;
};

template <typename T>
struct StageForward {
  SeqTensor<T> logits;
  StageCache<T> cache;
};

template <typename T>
struct StageBackward {
  SeqTensor<T> grad_input;
  StageParams<T> grads;
};

template <typename T>
struct StagePredictions {
  std::vector<SeqTensor<T>> per_stage_logits;
  std::vector<SeqTensor<T>> per_stage_probs;

  const SeqTensor<T>& final_probs() const { return per_stage_probs.back(); }
};

/// Forward pass with every activation kept for backpropagation.
template <typename T>
struct ForwardTrace {
  StagePredictions<T> predictions;
  std::vector<StageCache<T>> stages;
};

template <typename T>
ResidualForward<T> dilated_residual_forward(const SeqTensor<T>& d_prev, const ResidualLayer<T>& layer);

template <typename T>
ResidualBackward<T> dilated_residual_backward(const ResidualLayer<T>& layer, const LayerCache<T>& cache,
                                              const SeqTensor<T>& grad_output);

template <typename T>
StageForward<T> stage_forward(const SeqTensor<T>& stage_input, const StageParams<T>& stage);

template <typename T>
StageBackward<T> stage_backward(const StageParams<T>& stage, const StageCache<T>& cache,
                                const SeqTensor<T>& grad_logits);

template <typename T>
ForwardTrace<T> multistage_trace(const SeqTensor<T>& features, const ModelParams<T>& params);

template <typename T>
StagePredictions<T> multistage_forward(const SeqTensor<T>& features, const ModelParams<T>& params);

template <typename T>
struct MultistageLoss {
  T total{};
  std::vector<T> per_stage;
};

template <typename T>
MultistageLoss<T> multistage_loss(const StagePredictions<T>& preds, const LabelSequence& labels,
                                  std::span<const T> class_weights);

template <typename T>
struct MultistageGradients {
  ModelParams<T> grads;
  MultistageLoss<T> loss;
  StagePredictions<T> predictions;
};

/// Exact gradients of multistage_loss for one video. With
/// detach_inter_stage the later stages' losses do not reach earlier stages.
template <typename T>
MultistageGradients<T> multistage_backward(const SeqTensor<T>& features, const ModelParams<T>& params,
                                           const LabelSequence& labels, std::span<const T> class_weights,
                                           bool detach_inter_stage = false);

/// Per-timestep argmax; ties go to the lowest class index.
template <typename T>
LabelSequence argmax_labels(const SeqTensor<T>& probs);

/// Predicted phase sequence, taken from the final stage.
template <typename T>
LabelSequence predict_labels(const StagePredictions<T>& preds) {
  return argmax_labels(preds.final_probs());
}

}  // namespace tecno
