#pragma once

// Training: one whole video per Adam step, averaged multi-stage weighted
// cross-entropy, best-on-validation model selection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tecno/checkpoint.hpp"
#include "tecno/data.hpp"
#include "tecno/metrics.hpp"
#include "tecno/model.hpp"

namespace tecno {

struct TrainConfig {
  ArchConfig arch;
  double lr = 5e-4;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;
  std::size_t seeds_for_repetition = 5;
  bool detach_inter_stage = false;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::size_t jobs = 1;    // validation evaluation threads

  std::filesystem::path data_dir;
  std::filesystem::path split_file;
  std::filesystem::path checkpoint_path;  // best checkpoint; empty skips writing
  std::filesystem::path log_path;         // newline-delimited EpochLog; empty skips

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Unknown keys are rejected. Relative paths stay relative.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::vector<double> stage_losses;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double seconds = 0.0;
};

nlohmann::json epoch_log_to_json(const EpochLog& log);

struct Dataset {
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> validation;
  std::vector<VideoRecord> test;
};

Dataset load_dataset(const std::filesystem::path& data_dir, const DatasetSplit& split);
Dataset load_dataset(const TrainConfig& config);

struct TrainResult {
  ModelParams<float> best;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
  std::vector<EpochLog> logs;
  std::vector<double> class_weights;
  std::size_t total_steps = 0;
  std::vector<std::string> warnings;

  Checkpoint checkpoint(const TrainConfig& config) const;
};

/// Called after every epoch; useful for progress output.
using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_run(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch = {});

struct EvalOptions {
  std::size_t jobs = 1;
};

/// Predicted labels of every stage for every video.
std::vector<VideoPredictions> predict_split(const ModelParams<float>& params, std::span<const VideoRecord> videos,
                                            std::size_t jobs = 1);

MetricsReport evaluate_split(const ModelParams<float>& params, std::span<const VideoRecord> videos,
                             const EvalOptions& options = {});

struct AblationRow {
  std::size_t num_stages = 0;
  std::vector<RunSummary> runs;  // final-stage test metrics per seed
  AggregateMetrics test;
};

struct AblationReport {
  std::vector<AblationRow> rows;
};

/// One model per stage count and per repetition seed (seed, seed+1, ...),
/// all on the same data.
AblationReport ablate_stages(const TrainConfig& config, const Dataset& data, std::span<const std::size_t> stage_counts);

nlohmann::json ablation_to_json(const AblationReport& report);
std::string ablation_to_table(const AblationReport& report);

}  // namespace tecno
