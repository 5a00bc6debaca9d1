#pragma once

// Frame-level phase recognition metrics. Rates are percentages in [0, 100].

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tecno/numcore.hpp"

namespace tecno {

/// counts[gt * classes + pred]
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * classes + pred]; }
};

ConfusionMatrix confusion_matrix(const LabelSequence& pred, const LabelSequence& gt, std::size_t classes);

double accuracy(const LabelSequence& pred, const LabelSequence& gt);

struct PrecisionRecall {
  std::vector<double> precision;  // per class
  std::vector<double> recall;     // per class
  std::vector<bool> included;     // class occurs in pred or gt
  double macro_precision = 0.0;
  double macro_recall = 0.0;
};

/// Zero denominators contribute 0; classes absent from both sequences are
/// left out of the macro averages.
PrecisionRecall precision_recall(const LabelSequence& pred, const LabelSequence& gt, std::size_t classes);

/// Number of maximal constant-label runs.
std::size_t segment_count(const LabelSequence& seq);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

struct StageMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::size_t segments = 0;
};

struct VideoMetrics {
  std::string video_id;
  std::size_t frames = 0;
  std::size_t gt_segments = 0;
  PrecisionRecall final_stage;
  std::vector<StageMetrics> stages;  // index m is stage m+1; back() is reported

  double accuracy() const { return stages.back().accuracy; }
};

struct AggregateMetrics {
  MeanStd accuracy;
  MeanStd precision;
  MeanStd recall;
};

enum class Pooling { PerVideo, Frame };

struct MetricsReport {
  std::vector<VideoMetrics> per_video;
  // Mean and population std over videos of each per-video metric, per stage.
  std::vector<AggregateMetrics> stage_aggregate;
  // All frames of the split pooled into one confusion matrix, per stage.
  std::vector<StageMetrics> stage_pooled;

  const AggregateMetrics& aggregate() const { return stage_aggregate.back(); }
  /// The reported (final-stage) metrics under the given pooling.
  StageMetrics headline(Pooling pooling = Pooling::PerVideo) const;
};

/// Per-video entry: ground truth and the predicted labels of every stage.
struct VideoPredictions {
  std::string video_id;
  LabelSequence gt;
  std::vector<LabelSequence> stage_predictions;
};

VideoMetrics video_metrics(const VideoPredictions& video, std::size_t classes);
MetricsReport build_report(std::span<const VideoPredictions> videos, std::size_t classes);

struct RunSummary {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Mean and population std across runs (seeds). Order-independent; an empty
/// list is a DataError.
AggregateMetrics aggregate_runs(std::span<const RunSummary> runs);

nlohmann::json report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);

/// Phase ribbon: one row of coloured bands per sequence (ground truth, then
/// each stage), one block of rows per video.
std::string render_ribbon(std::span<const VideoPredictions> videos, std::size_t classes);
void emit_ribbon(std::span<const VideoPredictions> videos, std::size_t classes, const std::filesystem::path& path);

/// Fill colour used for a phase in ribbons.
std::string phase_color(std::size_t phase);

}  // namespace tecno
