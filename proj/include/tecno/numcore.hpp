#pragma once

// Dense sequence tensors and the handful of differentiable kernels the
// temporal model is built from. Every kernel is a pure function templated
// on the scalar type; float and double are instantiated in numcore.cpp.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tecno/errors.hpp"

namespace tecno {

using LabelSequence = std::vector<std::int32_t>;

/// Channels x timesteps matrix stored row-major (one row per channel).
template <typename T>
class SeqTensor {
 public:
  using value_type = T;

  SeqTensor() = default;
  SeqTensor(std::size_t channels, std::size_t timesteps, T fill = T{0});
  SeqTensor(std::size_t channels, std::size_t timesteps, std::vector<T> values);

  std::size_t channels() const { return channels_; }
  std::size_t timesteps() const { return timesteps_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  T& operator()(std::size_t channel, std::size_t t) { return values_[channel * timesteps_ + t]; }
  T operator()(std::size_t channel, std::size_t t) const { return values_[channel * timesteps_ + t]; }

  std::span<T> row(std::size_t channel) { return {values_.data() + channel * timesteps_, timesteps_}; }
  std::span<const T> row(std::size_t channel) const {
    return {values_.data() + channel * timesteps_, timesteps_};
  }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  /// Copy of the timestep range [begin, end).
  SeqTensor slice_time(std::size_t begin, std::size_t end) const;

  bool all_finite() const;

  friend bool operator==(const SeqTensor&, const SeqTensor&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t timesteps_ = 0;
  std::vector<T> values_;
};

/// Causal 1D convolution kernel. weights are laid out [out][in][tap]; tap
/// k-1 reads the current timestep and tap j reads t - dilation*(k-1-j).
template <typename T>
struct ConvKernel {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_size = 1;
  std::size_t dilation = 1;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvKernel() = default;
  ConvKernel(std::size_t out, std::size_t in, std::size_t kernel_size, std::size_t dilation);

  T& w(std::size_t o, std::size_t i, std::size_t j) {
    return weights[(o * in_channels + i) * kernel_size + j];
  }
  T w(std::size_t o, std::size_t i, std::size_t j) const {
    return weights[(o * in_channels + i) * kernel_size + j];
  }

  /// Left zero-padding width, dilation*(k-1).
  std::size_t padding() const { return dilation * (kernel_size - 1); }

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

template <typename T>
struct ConvGrads {
  SeqTensor<T> grad_input;
  std::vector<T> grad_weights;
  std::vector<T> grad_bias;
};

template <typename T>
SeqTensor<T> conv1d_causal_forward(const SeqTensor<T>& input, const ConvKernel<T>& kernel);

template <typename T>
ConvGrads<T> conv1d_causal_backward(const SeqTensor<T>& input, const ConvKernel<T>& kernel,
                                    const SeqTensor<T>& grad_output);

template <typename T>
SeqTensor<T> relu_forward(const SeqTensor<T>& input);

/// Passes the gradient where input > 0; the subgradient at exactly 0 is 0.
template <typename T>
SeqTensor<T> relu_backward(const SeqTensor<T>& input, const SeqTensor<T>& grad_output);

/// Softmax over the channel axis, independently for every timestep.
template <typename T>
SeqTensor<T> softmax_time(const SeqTensor<T>& logits);

/// Vector-Jacobian product of softmax_time given its output.
template <typename T>
SeqTensor<T> softmax_backward(const SeqTensor<T>& probs, const SeqTensor<T>& grad_probs);

template <typename T>
struct LossAndGrad {
  T loss{};
  SeqTensor<T> grad_logits;
};

/// Probability floor applied before the logarithm.
inline constexpr double kLogClamp = 1e-10;

/// -(1/T) sum_t w[y_t] log(max(p_t[y_t], 1e-10)), and its gradient with
/// respect to the logits that produced probs through softmax_time.
template <typename T>
LossAndGrad<T> weighted_ce(const SeqTensor<T>& probs, const LabelSequence& labels,
                           std::span<const T> class_weights);

template <typename T>
struct AdamState {
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step_count = 0;
  T lr = T(5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);

  static AdamState zeros(std::size_t parameter_count, T lr = T(5e-4));

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update applied in place to params and state.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state);

}  // namespace tecno
