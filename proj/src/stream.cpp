#include "tecno/stream.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tecno {

template <typename T>
StreamSession<T>::StreamSession(std::shared_ptr<const ModelParams<T>> params) : params_(std::move(params)) {
  if (!params_) throw ConfigError("stream session needs model parameters");
  const auto& config = params_->config;
  config.validate();
  if (params_->stages.size() != config.num_stages) throw ShapeError("model stage count disagrees with its config");
  const std::size_t hidden = config.hidden_dim;
  buffers_.resize(params_->stages.size());
  for (std::size_t s = 0; s < params_->stages.size(); ++s) {
    for (const auto& layer : params_->stages[s].layers) {
      Ring ring;
      ring.capacity = layer.dilated.padding();
      ring.values.assign(ring.capacity * hidden, T{0});
      buffers_[s].push_back(std::move(ring));
    }
  }
  probs_.assign(params_->stages.size(), std::vector<T>(config.num_classes, T{0}));
  hidden_.resize(hidden);
  next_.resize(hidden);
  activation_.resize(hidden);
  logits_.resize(config.num_classes);
}

template <typename T>
void StreamSession<T>::reset() {
  for (auto& stage : buffers_) {
    for (auto& ring : stage) {
      std::fill(ring.values.begin(), ring.values.end(), T{0});
      ring.head = 0;
    }
  }
  for (auto& p : probs_) std::fill(p.begin(), p.end(), T{0});
  frames_seen_ = 0;
}

template <typename T>
std::size_t StreamSession<T>::buffered_values() const {
  std::size_t total = 0;
  for (const auto& stage : buffers_) {
    for (const auto& ring : stage) total += ring.values.size();
  }
  return total;
}

namespace {

// out = bias + sum_i w[o][i][tap] * in[i], with the same accumulation order
// as the offline convolution (bias, tap-major, channel).
template <typename T>
void pointwise(const ConvKernel<T>& kernel, const T* in, T* out) {
  for (std::size_t o = 0; o < kernel.out_channels; ++o) {
    T acc = kernel.bias[o];
    for (std::size_t i = 0; i < kernel.in_channels; ++i) acc += kernel.w(o, i, 0) * in[i];
    out[o] = acc;
  }
}

}  // namespace

template <typename T>
const std::vector<std::vector<T>>& StreamSession<T>::push(std::span<const T> frame) {
  const auto& config = params_->config;
  if (frame.size() != config.input_dim) {
    throw ShapeError("stream frame has dimension " + std::to_string(frame.size()) + ", model expects " +
                     std::to_string(config.input_dim));
  }
  for (T v : frame) {
    if (!std::isfinite(v)) throw NumericError("stream frame contains non-finite values");
  }
  const std::size_t hidden = config.hidden_dim;
  const T* input = frame.data();
  for (std::size_t s = 0; s < params_->stages.size(); ++s) {
    const auto& stage = params_->stages[s];
    pointwise(stage.input_projection, input, hidden_.data());
    for (std::size_t l = 0; l < stage.layers.size(); ++l) {
      const auto& layer = stage.layers[l];
      const auto& kernel = layer.dilated;
      Ring& ring = buffers_[s][l];
      const std::size_t k = kernel.kernel_size;
      for (std::size_t o = 0; o < hidden; ++o) {
        T acc = kernel.bias[o];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t back = kernel.dilation * (k - 1 - j);
          const T* src = back == 0 ? hidden_.data() : ring.lag(back, hidden);
          for (std::size_t i = 0; i < hidden; ++i) acc += kernel.w(o, i, j) * src[i];
        }
        activation_[o] = acc > T{0} ? acc : T{0};
      }
      pointwise(layer.pointwise, activation_.data(), next_.data());
      for (std::size_t o = 0; o < hidden; ++o) next_[o] += hidden_[o];

      std::copy(hidden_.begin(), hidden_.end(), ring.values.begin() + static_cast<std::ptrdiff_t>(ring.head * hidden));
      ring.head = (ring.head + 1) % ring.capacity;
      std::swap(hidden_, next_);
    }
    pointwise(stage.output_head, hidden_.data(), logits_.data());

    auto& probs = probs_[s];
    T peak = logits_[0];
    for (T v : logits_) peak = std::max(peak, v);
    T total{0};
    for (std::size_t c = 0; c < logits_.size(); ++c) {
      probs[c] = std::exp(logits_[c] - peak);
      total += probs[c];
    }
    for (T& p : probs) p /= total;
    input = probs.data();
  }
  ++frames_seen_;
  return probs_;
}

template class StreamSession<float>;
template class StreamSession<double>;

}  // namespace tecno
