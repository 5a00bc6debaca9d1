#pragma once

// Frame-by-frame inference. Each dilated layer keeps a ring buffer with the
// last 2*dilation inputs it has seen, which is exactly the history its
// causal kernel reads, so a push costs the same regardless of stream length.
// Buffers start zero-filled, matching the offline left zero-padding.

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "tecno/model.hpp"

namespace tecno {

template <typename T>
class StreamSession {
 public:
  explicit StreamSession(std::shared_ptr<const ModelParams<T>> params);

  /// Consumes one frame and returns the class probabilities of every stage
  /// for it. The reference stays valid until the next push or reset.
  const std::vector<std::vector<T>>& push(std::span<const T> frame);

  void reset();

  std::size_t frames_seen() const { return frames_seen_; }
  const std::vector<std::vector<T>>& last_probs() const { return probs_; }
  const std::vector<T>& final_probs() const { return probs_.back(); }
  const ModelParams<T>& params() const { return *params_; }

  /// Capacity in hidden vectors of the buffer feeding layer `layer` (0-based).
  std::size_t buffer_capacity(std::size_t stage, std::size_t layer) const {
    return buffers_[stage][layer].capacity;
  }
  /// Total buffered scalars across all stages and layers.
  std::size_t buffered_values() const;

 private:
  struct Ring {
    std::size_t capacity = 0;  // in vectors
    std::size_t head = 0;      // slot for the next write
    std::vector<T> values;     // capacity x hidden

    const T* lag(std::size_t steps_back, std::size_t width) const {
      return values.data() + ((head + capacity - steps_back) % capacity) * width;
    }
  };

  std::shared_ptr<const ModelParams<T>> params_;
  std::vector<std::vector<Ring>> buffers_;
  std::size_t frames_seen_ = 0;
  std::vector<std::vector<T>> probs_;
  // Scratch.
  std::vector<T> hidden_;
  std::vector<T> next_;
  std::vector<T> activation_;
  std::vector<T> logits_;
};

}  // namespace tecno
