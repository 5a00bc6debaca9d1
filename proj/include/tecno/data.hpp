#pragma once

// Video records, their on-disk formats, dataset splits, class weighting and
// the synthetic workflow generator.
//
// Feature file (little-endian):
//   8 bytes "TECNOFT1", u32 version = 1, u64 T, u32 D, then T*D f32 values
//   in time-major order (all D values of frame 0, then frame 1, ...).
// Label file: JSON {"video_id", "fps", "num_classes", "phase_names", "labels"}.
// Split file: JSON {"train": [ids], "validation": [ids], "test": [ids]}.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tecno/numcore.hpp"

namespace tecno {

using FeatureSequence = SeqTensor<float>;  // input_dim x T

struct VideoRecord {
  std::string video_id;
  double fps = 1.0;
  FeatureSequence features;
  LabelSequence labels;
  std::vector<std::string> phase_names;

  std::size_t num_classes() const { return phase_names.size(); }
  /// Throws DataError unless features and labels agree and labels are in range.
  void validate() const;
};

struct LabelFile {
  std::string video_id;
  double fps = 1.0;
  std::size_t num_classes = 0;
  std::vector<std::string> phase_names;
  LabelSequence labels;

  friend bool operator==(const LabelFile&, const LabelFile&) = default;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// Throws DataError if an identifier appears twice.
  void validate_disjoint() const;
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct ClassWeights {
  std::vector<double> weights;
};

/// Median frequency balancing: w_c = median(f) / f_c over classes with a
/// non-zero count; absent classes get weight 0.
ClassWeights compute_mfb_weights(std::span<const std::uint64_t> label_counts);

std::vector<std::uint64_t> count_labels(std::span<const VideoRecord> records, std::size_t num_classes);

void write_features(const std::filesystem::path& path, const FeatureSequence& features);
FeatureSequence read_features(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, const LabelFile& labels);
LabelFile read_labels(const std::filesystem::path& path);

void write_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split(const std::filesystem::path& path);

/// <dir>/<id>.feat and <dir>/<id>.labels.json
void write_record(const std::filesystem::path& dir, const VideoRecord& record);
VideoRecord read_record(const std::filesystem::path& dir, const std::string& video_id);

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

/// Seeded shuffle followed by partition. Sizes are floor(f * n) with the
/// remainder given one at a time to the largest fractional parts (ties to
/// the earlier split). With require_all_nonempty, any empty split is a
/// ConfigError.
DatasetSplit split_dataset(std::span<const std::string> video_ids, const SplitFractions& fractions,
                           std::uint64_t seed, bool require_all_nonempty = true);

struct SynthConfig {
  std::size_t num_classes = 7;
  std::size_t num_videos = 12;
  std::size_t min_frames = 200;
  std::size_t max_frames = 400;
  std::size_t feature_dim = 16;
  double noise_std = 0.5;
  std::size_t transition_blend = 5;
  double skip_prob = 0.0;
  double fps = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Phases are visited in order 0..C-1, each skipped with skip_prob, with
/// durations uniform in [min_frames / C, max_frames / C]. Each phase owns a
/// seeded random unit embedding, mutually orthogonal while C <= feature_dim;
/// frames within transition_blend of a boundary interpolate linearly between
/// the adjacent embeddings.
std::vector<VideoRecord> synth_generate(const SynthConfig& config);

/// Phase embeddings used by synth_generate (C vectors of feature_dim).
std::vector<std::vector<float>> synth_embeddings(const SynthConfig& config);

}  // namespace tecno
