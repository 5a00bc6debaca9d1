#include "tecno/model.hpp"

#include <cmath>
#include <random>
#include <string>

namespace tecno {

void ArchConfig::validate() const {
  if (input_dim < 1) throw ConfigError("arch.input_dim must be >= 1");
  if (hidden_dim < 1) throw ConfigError("arch.hidden_dim must be >= 1");
  if (num_layers < 1) throw ConfigError("arch.num_layers must be >= 1");
  if (num_layers > 30) throw ConfigError("arch.num_layers must be <= 30");
  if (num_stages < 1) throw ConfigError("arch.num_stages must be >= 1");
  if (num_classes < 2) throw ConfigError("arch.num_classes must be >= 2");
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t count = 0;
  for_each_array(*this, [&](const std::vector<T>& a) { count += a.size(); });
  return count;
}

template <typename T>
std::vector<T> flatten(const ModelParams<T>& params) {
  std::vector<T> flat;
  flat.reserve(params.parameter_count());
  for_each_array(params, [&](const std::vector<T>& a) { flat.insert(flat.end(), a.begin(), a.end()); });
  return flat;
}

template <typename T>
void assign_flat(ModelParams<T>& params, std::span<const T> flat) {
  if (flat.size() != params.parameter_count()) {
    throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) + " entries, model has " +
                     std::to_string(params.parameter_count()));
  }
  std::size_t offset = 0;
  for_each_array(params, [&](std::vector<T>& a) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + a.size()), a.begin());
    offset += a.size();
  });
}

template <typename T>
ModelParams<T> zero_params(const ArchConfig& config) {
  config.validate();
  ModelParams<T> params{config, {}};
  params.stages.reserve(config.num_stages);
  for (std::size_t m = 0; m < config.num_stages; ++m) {
    StageParams<T> stage;
    const std::size_t in = m == 0 ? config.input_dim : config.num_classes;
    stage.input_projection = ConvKernel<T>(config.hidden_dim, in, 1, 1);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      stage.layers.push_back({ConvKernel<T>(config.hidden_dim, config.hidden_dim, ArchConfig::kernel_size,
                                            ArchConfig::dilation_of_layer(l)),
                              ConvKernel<T>(config.hidden_dim, config.hidden_dim, 1, 1)});
    }
    stage.output_head = ConvKernel<T>(config.num_classes, config.hidden_dim, 1, 1);
    params.stages.push_back(std::move(stage));
  }
  return params;
}

namespace {

template <typename T>
void he_uniform(ConvKernel<T>& kernel, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(kernel.in_channels * kernel.kernel_size);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& w : kernel.weights) w = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ArchConfig& config, std::uint64_t seed) {
  ModelParams<T> params = zero_params<T>(config);
  std::mt19937_64 rng(seed);
  for (auto& stage : params.stages) {
    he_uniform(stage.input_projection, rng);
    for (auto& layer : stage.layers) {
      he_uniform(layer.dilated, rng);
      he_uniform(layer.pointwise, rng);
    }
    he_uniform(stage.output_head, rng);
  }
  return params;
}

std::uint64_t receptive_field(std::size_t layers) {
  if (layers == 0) throw DomainError("receptive_field requires at least one layer");
  if (layers > 62) throw DomainError("receptive_field overflows for " + std::to_string(layers) + " layers");
  return (std::uint64_t{1} << (layers + 1)) - 1;
}

namespace {

template <typename T>
void add_into(SeqTensor<T>& dst, const SeqTensor<T>& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t n = 0; n < d.size(); ++n) d[n] += s[n];
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
}

template <typename T>
void store_grads(ConvKernel<T>& slot, const ConvKernel<T>& like, ConvGrads<T>&& g) {
  slot = ConvKernel<T>(like.out_channels, like.in_channels, like.kernel_size, like.dilation);
  slot.weights = std::move(g.grad_weights);
  slot.bias = std::move(g.grad_bias);
}

}  // namespace

template <typename T>
ResidualForward<T> dilated_residual_forward(const SeqTensor<T>& d_prev, const ResidualLayer<T>& layer) {
  if (d_prev.channels() != layer.dilated.in_channels) {
    throw ShapeError("residual layer input has " + std::to_string(d_prev.channels()) +
                     " channels, layer expects " + std::to_string(layer.dilated.in_channels));
  }
  ResidualForward<T> result;
  result.cache.input = d_prev;
  result.cache.pre_activation = conv1d_causal_forward(d_prev, layer.dilated);
  result.cache.activation = relu_forward(result.cache.pre_activation);
  result.output = conv1d_causal_forward(result.cache.activation, layer.pointwise);
  add_into(result.output, d_prev);
  return result;
}

template <typename T>
ResidualBackward<T> dilated_residual_backward(const ResidualLayer<T>& layer, const LayerCache<T>& cache,
                                              const SeqTensor<T>& grad_output) {
  ResidualBackward<T> result;
  auto pointwise = conv1d_causal_backward(cache.activation, layer.pointwise, grad_output);
  const SeqTensor<T> grad_pre = relu_backward(cache.pre_activation, pointwise.grad_input);
  auto dilated = conv1d_causal_backward(cache.input, layer.dilated, grad_pre);
  result.grad_input = std::move(dilated.grad_input);
  add_into(result.grad_input, grad_output);
  store_grads(result.grads.pointwise, layer.pointwise, std::move(pointwise));
  store_grads(result.grads.dilated, layer.dilated, std::move(dilated));
  return result;
}

template <typename T>
StageForward<T> stage_forward(const SeqTensor<T>& stage_input, const StageParams<T>& stage) {
  if (stage_input.channels() != stage.input_projection.in_channels) {
    throw ShapeError("stage input has " + std::to_string(stage_input.channels()) + " channels, stage expects " +
                     std::to_string(stage.input_projection.in_channels));
  }
  StageForward<T> result;
  result.cache.input = stage_input;
  SeqTensor<T> hidden = conv1d_causal_forward(stage_input, stage.input_projection);
  result.cache.layers.reserve(stage.layers.size());
  for (const auto& layer : stage.layers) {
    auto step = dilated_residual_forward(hidden, layer);
    hidden = std::move(step.output);
    result.cache.layers.push_back(std::move(step.cache));
  }
  result.logits = conv1d_causal_forward(hidden, stage.output_head);
  result.cache.hidden = std::move(hidden);
  return result;
}

template <typename T>
StageBackward<T> stage_backward(const StageParams<T>& stage, const StageCache<T>& cache,
                                const SeqTensor<T>& grad_logits) {
  StageBackward<T> result;
  auto head = conv1d_causal_backward(cache.hidden, stage.output_head, grad_logits);
  SeqTensor<T> grad = std::move(head.grad_input);
  store_grads(result.grads.output_head, stage.output_head, std::move(head));

  result.grads.layers.resize(stage.layers.size());
  for (std::size_t l = stage.layers.size(); l-- > 0;) {
    auto back = dilated_residual_backward(stage.layers[l], cache.layers[l], grad);
    grad = std::move(back.grad_input);
    result.grads.layers[l] = std::move(back.grads);
  }
  // Projection input: cache.input for stage 1 is the features.
  auto projection = conv1d_causal_backward(cache.input, stage.input_projection, grad);
  result.grad_input = std::move(projection.grad_input);
  store_grads(result.grads.input_projection, stage.input_projection, std::move(projection));
  return result;
}

template <typename T>
ForwardTrace<T> multistage_trace(const SeqTensor<T>& features, const ModelParams<T>& params) {
  if (features.channels() != params.config.input_dim) {
    throw ShapeError("features have dimension " + std::to_string(features.channels()) + ", model expects " +
                     std::to_string(params.config.input_dim));
  }
  if (params.stages.size() != params.config.num_stages) {
    throw ShapeError("model has " + std::to_string(params.stages.size()) + " stages, config declares " +
                     std::to_string(params.config.num_stages));
  }
  ForwardTrace<T> trace;
  const SeqTensor<T>* input = &features;
  for (const auto& stage : params.stages) {
    auto out = stage_forward(*input, stage);
    trace.predictions.per_stage_probs.push_back(softmax_time(out.logits));
    trace.predictions.per_stage_logits.push_back(std::move(out.logits));
    trace.stages.push_back(std::move(out.cache));
    input = &trace.predictions.per_stage_probs.back();
  }
  return trace;
}

template <typename T>
StagePredictions<T> multistage_forward(const SeqTensor<T>& features, const ModelParams<T>& params) {
  if (features.channels() != params.config.input_dim) {
    throw ShapeError("features have dimension " + std::to_string(features.channels()) + ", model expects " +
                     std::to_string(params.config.input_dim));
  }
  StagePredictions<T> preds;
  preds.per_stage_logits.reserve(params.stages.size());
  preds.per_stage_probs.reserve(params.stages.size());
  const SeqTensor<T>* input = &features;
  for (const auto& stage : params.stages) {
    if (input->channels() != stage.input_projection.in_channels) {
      throw ShapeError("stage input has " + std::to_string(input->channels()) + " channels, stage expects " +
                       std::to_string(stage.input_projection.in_channels));
    }
    // Same arithmetic as stage_forward without retaining caches.
    SeqTensor<T> hidden = conv1d_causal_forward(*input, stage.input_projection);
    for (const auto& layer : stage.layers) {
      SeqTensor<T> z = relu_forward(conv1d_causal_forward(hidden, layer.dilated));
      SeqTensor<T> next = conv1d_causal_forward(z, layer.pointwise);
      add_into(next, hidden);
      hidden = std::move(next);
    }
    SeqTensor<T> logits = conv1d_causal_forward(hidden, stage.output_head);
    preds.per_stage_probs.push_back(softmax_time(logits));
    preds.per_stage_logits.push_back(std::move(logits));
    input = &preds.per_stage_probs.back();
  }
  return preds;
}

template <typename T>
MultistageLoss<T> multistage_loss(const StagePredictions<T>& preds, const LabelSequence& labels,
                                  std::span<const T> class_weights) {
  if (preds.per_stage_probs.empty()) throw ShapeError("multistage_loss: no stage predictions");
  MultistageLoss<T> result;
  T sum{0};
  for (const auto& probs : preds.per_stage_probs) {
    const T term = weighted_ce(probs, labels, class_weights).loss;
    result.per_stage.push_back(term);
    sum += term;
  }
  result.total = sum / static_cast<T>(preds.per_stage_probs.size());
  return result;
}

template <typename T>
MultistageGradients<T> multistage_backward(const SeqTensor<T>& features, const ModelParams<T>& params,
                                           const LabelSequence& labels, std::span<const T> class_weights,
                                           bool detach_inter_stage) {
  ForwardTrace<T> trace = multistage_trace(features, params);
  const std::size_t stages = params.stages.size();
  const T inv_stages = T{1} / static_cast<T>(stages);

  MultistageGradients<T> result;
  result.grads.config = params.config;
  result.grads.stages.resize(stages);
  result.loss.per_stage.resize(stages);

  // Gradient flowing into the probabilities of stage m from stage m+1.
  SeqTensor<T> grad_from_next;
  T sum{0};
  for (std::size_t m = stages; m-- > 0;) {
    const auto& probs = trace.predictions.per_stage_probs[m];
    auto ce = weighted_ce(probs, labels, class_weights);
    result.loss.per_stage[m] = ce.loss;
    sum += ce.loss;

    SeqTensor<T> grad_logits = std::move(ce.grad_logits);
    for (T& g : grad_logits.values()) g *= inv_stages;
    if (!grad_from_next.empty()) add_into(grad_logits, softmax_backward(probs, grad_from_next));

    auto back = stage_backward(params.stages[m], trace.stages[m], grad_logits);
    result.grads.stages[m] = std::move(back.grads);
    if (m > 0 && !detach_inter_stage) {
      grad_from_next = std::move(back.grad_input);
    } else {
      grad_from_next = SeqTensor<T>();
    }
  }
  result.loss.total = sum * inv_stages;
  result.predictions = std::move(trace.predictions);
  return result;
}

template <typename T>
LabelSequence argmax_labels(const SeqTensor<T>& probs) {
  LabelSequence labels(probs.timesteps());
  for (std::size_t t = 0; t < probs.timesteps(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.channels(); ++c) {
      if (probs(c, t) > probs(best, t)) best = c;
    }
    labels[t] = static_cast<std::int32_t>(best);
  }
  return labels;
}

#define TECNO_INSTANTIATE_MODEL(T)                                                                          \
  template struct ModelParams<T>;                                                                           \
  template std::vector<T> flatten(const ModelParams<T>&);                                                   \
  template void assign_flat(ModelParams<T>&, std::span<const T>);                                           \
  template ModelParams<T> zero_params<T>(const ArchConfig&);                                                \
  template ModelParams<T> init_params<T>(const ArchConfig&, std::uint64_t);                                 \
  template ResidualForward<T> dilated_residual_forward(const SeqTensor<T>&, const ResidualLayer<T>&);       \
  template ResidualBackward<T> dilated_residual_backward(const ResidualLayer<T>&, const LayerCache<T>&,     \
                                                         const SeqTensor<T>&);                              \
  template StageForward<T> stage_forward(const SeqTensor<T>&, const StageParams<T>&);                       \
  template StageBackward<T> stage_backward(const StageParams<T>&, const StageCache<T>&, const SeqTensor<T>&); \
  template ForwardTrace<T> multistage_trace(const SeqTensor<T>&, const ModelParams<T>&);                    \
  template StagePredictions<T> multistage_forward(const SeqTensor<T>&, const ModelParams<T>&);              \
  template MultistageLoss<T> multistage_loss(const StagePredictions<T>&, const LabelSequence&,              \
                                             std::span<const T>);                                           \
  template MultistageGradients<T> multistage_backward(const SeqTensor<T>&, const ModelParams<T>&,           \
                                                      const LabelSequence&, std::span<const T>, bool);      \
  template LabelSequence argmax_labels(const SeqTensor<T>&);

TECNO_INSTANTIATE_MODEL(float)
TECNO_INSTANTIATE_MODEL(double)

}  // namespace tecno
