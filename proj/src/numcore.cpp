#include "tecno/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tecno {

template <typename T>
SeqTensor<T>::SeqTensor(std::size_t channels, std::size_t timesteps, T fill)
    : channels_(channels), timesteps_(timesteps), values_(channels * timesteps, fill) {
  if (channels == 0 || timesteps == 0) {
    throw ShapeError("SeqTensor requires channels >= 1 and timesteps >= 1, got " +
                     std::to_string(channels) + "x" + std::to_string(timesteps));
  }
}

template <typename T>
SeqTensor<T>::SeqTensor(std::size_t channels, std::size_t timesteps, std::vector<T> values)
    : channels_(channels), timesteps_(timesteps), values_(std::move(values)) {
  if (channels == 0 || timesteps == 0) {
    throw ShapeError("SeqTensor requires channels >= 1 and timesteps >= 1, got " +
                     std::to_string(channels) + "x" + std::to_string(timesteps));
  }
  if (values_.size() != channels * timesteps) {
    throw ShapeError("SeqTensor value count " + std::to_string(values_.size()) +
                     " does not match " + std::to_string(channels) + "x" +
                     std::to_string(timesteps));
  }
}

template <typename T>
SeqTensor<T> SeqTensor<T>::slice_time(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > timesteps_) {
    throw ShapeError("invalid time slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + std::to_string(timesteps_) + " timesteps");
  }
  SeqTensor out(channels_, end - begin);
  for (std::size_t c = 0; c < channels_; ++c) {
    auto src = row(c);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin),
              src.begin() + static_cast<std::ptrdiff_t>(end), out.row(c).begin());
  }
  return out;
}

template <typename T>
bool SeqTensor<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
ConvKernel<T>::ConvKernel(std::size_t out, std::size_t in, std::size_t k, std::size_t dil)
    : out_channels(out),
      in_channels(in),
      kernel_size(k),
      dilation(dil),
      weights(out * in * k, T{0}),
      bias(out, T{0}) {
  if (out == 0 || in == 0) throw ShapeError("ConvKernel requires positive channel counts");
  if (k != 1 && k != 3) throw ShapeError("ConvKernel kernel_size must be 1 or 3, got " + std::to_string(k));
  if (dil == 0) throw ShapeError("ConvKernel dilation must be >= 1");
}

namespace {

template <typename T>
void check_kernel(const ConvKernel<T>& kernel) {
  if (kernel.weights.size() != kernel.out_channels * kernel.in_channels * kernel.kernel_size ||
      kernel.bias.size() != kernel.out_channels) {
    throw ShapeError("ConvKernel arrays do not match its declared shape");
  }
}

}  // namespace

template <typename T>
SeqTensor<T> conv1d_causal_forward(const SeqTensor<T>& input, const ConvKernel<T>& kernel) {
  check_kernel(kernel);
  if (input.channels() != kernel.in_channels) {
    throw ShapeError("conv input has " + std::to_string(input.channels()) +
                     " channels, kernel expects " + std::to_string(kernel.in_channels));
  }
  if (!input.all_finite()) throw NumericError("conv input contains non-finite values");

  const std::size_t steps = input.timesteps();
  const std::size_t k = kernel.kernel_size;
  SeqTensor<T> out(kernel.out_channels, steps);
  // Per output element the accumulation order is bias, then tap-major, then
  // input channel. The streaming engine reproduces this order.
  for (std::size_t o = 0; o < kernel.out_channels; ++o) {
    T* dst = out.row(o).data();
    std::fill(dst, dst + steps, kernel.bias[o]);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t shift = kernel.dilation * (k - 1 - j);
      if (shift >= steps) continue;
      for (std::size_t i = 0; i < kernel.in_channels; ++i) {
        const T weight = kernel.w(o, i, j);
        const T* src = input.row(i).data();
        for (std::size_t t = shift; t < steps; ++t) dst[t] += weight * src[t - shift];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv1d_causal_backward(const SeqTensor<T>& input, const ConvKernel<T>& kernel,
                                    const SeqTensor<T>& grad_output) {
  check_kernel(kernel);
  if (input.channels() != kernel.in_channels) {
    throw ShapeError("conv backward input has " + std::to_string(input.channels()) +
                     " channels, kernel expects " + std::to_string(kernel.in_channels));
  }
  if (grad_output.channels() != kernel.out_channels || grad_output.timesteps() != input.timesteps()) {
    throw ShapeError("conv backward grad_output shape does not match the forward output");
  }

  const std::size_t steps = input.timesteps();
  const std::size_t k = kernel.kernel_size;
  ConvGrads<T> grads{SeqTensor<T>(kernel.in_channels, steps),
                     std::vector<T>(kernel.weights.size(), T{0}),
                     std::vector<T>(kernel.out_channels, T{0})};

  for (std::size_t o = 0; o < kernel.out_channels; ++o) {
    const T* g = grad_output.row(o).data();
    T bias_sum{0};
    for (std::size_t t = 0; t < steps; ++t) bias_sum += g[t];
    grads.grad_bias[o] = bias_sum;

    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t shift = kernel.dilation * (k - 1 - j);
      if (shift >= steps) continue;
      const std::size_t span = steps - shift;
      for (std::size_t i = 0; i < kernel.in_channels; ++i) {
        const T* src = input.row(i).data();
        T* gin = grads.grad_input.row(i).data();
        const T weight = kernel.w(o, i, j);
        // Four partial sums so the reduction vectorizes.
        T acc[4] = {T{0}, T{0}, T{0}, T{0}};
        std::size_t t = 0;
        for (; t + 4 <= span; t += 4) {
          for (std::size_t u = 0; u < 4; ++u) acc[u] += g[shift + t + u] * src[t + u];
        }
        for (; t < span; ++t) acc[0] += g[shift + t] * src[t];
        grads.grad_weights[(o * kernel.in_channels + i) * k + j] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (std::size_t s = 0; s < span; ++s) gin[s] += weight * g[shift + s];
      }
    }
  }
  return grads;
}

template <typename T>
SeqTensor<T> relu_forward(const SeqTensor<T>& input) {
  if (!input.all_finite()) throw NumericError("relu input contains non-finite values");
  SeqTensor<T> out = input;
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
SeqTensor<T> relu_backward(const SeqTensor<T>& input, const SeqTensor<T>& grad_output) {
  if (input.channels() != grad_output.channels() || input.timesteps() != grad_output.timesteps()) {
    throw ShapeError("relu backward shape mismatch");
  }
  SeqTensor<T> out(input.channels(), input.timesteps());
  auto x = input.values();
  auto g = grad_output.values();
  auto dst = out.values();
  for (std::size_t n = 0; n < dst.size(); ++n) dst[n] = x[n] > T{0} ? g[n] : T{0};
  return out;
}

template <typename T>
SeqTensor<T> softmax_time(const SeqTensor<T>& logits) {
  if (!logits.all_finite()) throw NumericError("softmax logits contain non-finite values");
  const std::size_t classes = logits.channels();
  const std::size_t steps = logits.timesteps();
  SeqTensor<T> probs(classes, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    T peak = logits(0, t);
    for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, logits(c, t));
    T total{0};
    for (std::size_t c = 0; c < classes; ++c) {
      const T e = std::exp(logits(c, t) - peak);
      probs(c, t) = e;
      total += e;
    }
    for (std::size_t c = 0; c < classes; ++c) probs(c, t) /= total;
  }
  return probs;
}

template <typename T>
SeqTensor<T> softmax_backward(const SeqTensor<T>& probs, const SeqTensor<T>& grad_probs) {
  if (probs.channels() != grad_probs.channels() || probs.timesteps() != grad_probs.timesteps()) {
    throw ShapeError("softmax backward shape mismatch");
  }
  const std::size_t classes = probs.channels();
  const std::size_t steps = probs.timesteps();
  SeqTensor<T> out(classes, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    T dot{0};
    for (std::size_t c = 0; c < classes; ++c) dot += probs(c, t) * grad_probs(c, t);
    for (std::size_t c = 0; c < classes; ++c) out(c, t) = probs(c, t) * (grad_probs(c, t) - dot);
  }
  return out;
}

template <typename T>
LossAndGrad<T> weighted_ce(const SeqTensor<T>& probs, const LabelSequence& labels,
                           std::span<const T> class_weights) {
  const std::size_t classes = probs.channels();
  const std::size_t steps = probs.timesteps();
  if (labels.size() != steps) {
    throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(steps) + " timesteps");
  }
  if (class_weights.size() != classes) {
    throw ShapeError("cross-entropy: " + std::to_string(class_weights.size()) + " class weights for " +
                     std::to_string(classes) + " classes");
  }
  for (T w : class_weights) {
    if (!(w >= T{0}) || !std::isfinite(w)) throw DataError("cross-entropy: class weights must be finite and non-negative");
  }

  LossAndGrad<T> result{T{0}, SeqTensor<T>(classes, steps)};
  const T inv_steps = T{1} / static_cast<T>(steps);
  const T clamp = static_cast<T>(kLogClamp);
  T total{0};
  for (std::size_t t = 0; t < steps; ++t) {
    const auto label = labels[t];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw LabelError("cross-entropy: label " + std::to_string(label) + " at t=" + std::to_string(t) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
    const auto y = static_cast<std::size_t>(label);
    const T weight = class_weights[y];
    total += weight * std::log(std::max(probs(y, t), clamp));
    // d/dz of -w log softmax(z)_y is w (p - onehot(y)).
    const T scale = weight * inv_steps;
    for (std::size_t c = 0; c < classes; ++c) {
      result.grad_logits(c, t) = scale * (probs(c, t) - (c == y ? T{1} : T{0}));
    }
  }
  result.loss = -total * inv_steps;
  return result;
}

template <typename T>
AdamState<T> AdamState<T>::zeros(std::size_t parameter_count, T lr) {
  AdamState state;
  state.first_moment.assign(parameter_count, T{0});
  state.second_moment.assign(parameter_count, T{0});
  state.lr = lr;
  return state;
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam: parameter, gradient and moment sizes differ (" + std::to_string(params.size()) +
                     ", " + std::to_string(grads.size()) + ", " + std::to_string(state.first_moment.size()) +
                     ")");
  }
  state.step_count += 1;
  const double step = static_cast<double>(state.step_count);
  const T correction1 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta1), step));
  const T correction2 = static_cast<T>(1.0 - std::pow(static_cast<double>(state.beta2), step));
  const T step_size = state.lr / correction1;
  const T sqrt_correction2 = std::sqrt(correction2);
  const T beta1 = state.beta1;
  const T beta2 = state.beta2;
  for (std::size_t n = 0; n < params.size(); ++n) {
    const T g = grads[n];
    T& m = state.first_moment[n];
    T& v = state.second_moment[n];
    m = beta1 * m + (T{1} - beta1) * g;
    v = beta2 * v + (T{1} - beta2) * g * g;
    const T denom = std::sqrt(v) / sqrt_correction2 + state.epsilon;
    params[n] -= step_size * m / denom;
  }
}

#define TECNO_INSTANTIATE_NUMCORE(T)                                                                    \
  template class SeqTensor<T>;                                                                          \
  template struct ConvKernel<T>;                                                                        \
  template struct AdamState<T>;                                                                         \
  template SeqTensor<T> conv1d_causal_forward(const SeqTensor<T>&, const ConvKernel<T>&);               \
  template ConvGrads<T> conv1d_causal_backward(const SeqTensor<T>&, const ConvKernel<T>&,               \
                                               const SeqTensor<T>&);                                    \
  template SeqTensor<T> relu_forward(const SeqTensor<T>&);                                              \
  template SeqTensor<T> relu_backward(const SeqTensor<T>&, const SeqTensor<T>&);                        \
  template SeqTensor<T> softmax_time(const SeqTensor<T>&);                                              \
  template SeqTensor<T> softmax_backward(const SeqTensor<T>&, const SeqTensor<T>&);                     \
  template LossAndGrad<T> weighted_ce(const SeqTensor<T>&, const LabelSequence&, std::span<const T>);   \
  template void adam_step(std::span<T>, std::span<const T>, AdamState<T>&);

TECNO_INSTANTIATE_NUMCORE(float)
TECNO_INSTANTIATE_NUMCORE(double)

}  // namespace tecno
