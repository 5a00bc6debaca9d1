#include "tecno/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tecno {

namespace {

void check_lengths(const LabelSequence& pred, const LabelSequence& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("prediction has " + std::to_string(pred.size()) + " frames, ground truth " +
                     std::to_string(gt.size()));
  }
  if (gt.empty()) throw DataError("metrics need at least one frame");
}

double percent(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

StageMetrics stage_metrics_from(const ConfusionMatrix& cm, const LabelSequence* pred) {
  StageMetrics m;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    correct += cm.at(c, c);
    for (std::size_t p = 0; p < cm.classes; ++p) total += cm.at(c, p);
  }
  m.accuracy = percent(correct, total);
  double prec_sum = 0.0;
  double rec_sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    std::uint64_t predicted = 0;
    std::uint64_t actual = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
      predicted += cm.at(k, c);
      actual += cm.at(c, k);
    }
    if (predicted == 0 && actual == 0) continue;
    ++included;
    prec_sum += percent(cm.at(c, c), predicted);
    rec_sum += percent(cm.at(c, c), actual);
  }
  if (included > 0) {
    m.macro_precision = prec_sum / static_cast<double>(included);
    m.macro_recall = rec_sum / static_cast<double>(included);
  }
  if (pred != nullptr) m.segments = segment_count(*pred);
  return m;
}

}  // namespace

ConfusionMatrix confusion_matrix(const LabelSequence& pred, const LabelSequence& gt, std::size_t classes) {
  check_lengths(pred, gt);
  ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0)};
  for (std::size_t t = 0; t < gt.size(); ++t) {
    const auto g = gt[t];
    const auto p = pred[t];
    if (g < 0 || p < 0 || static_cast<std::size_t>(g) >= classes || static_cast<std::size_t>(p) >= classes) {
      throw LabelError("label out of range at frame " + std::to_string(t));
    }
    ++cm.counts[static_cast<std::size_t>(g) * classes + static_cast<std::size_t>(p)];
  }
  return cm;
}

double accuracy(const LabelSequence& pred, const LabelSequence& gt) {
  check_lengths(pred, gt);
  std::uint64_t correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) correct += pred[t] == gt[t] ? 1 : 0;
  return percent(correct, gt.size());
}

PrecisionRecall precision_recall(const LabelSequence& pred, const LabelSequence& gt, std::size_t classes) {
  const ConfusionMatrix cm = confusion_matrix(pred, gt, classes);
  PrecisionRecall pr;
  pr.precision.assign(classes, 0.0);
  pr.recall.assign(classes, 0.0);
  pr.included.assign(classes, false);
  std::size_t included = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::uint64_t predicted = 0;
    std::uint64_t actual = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      predicted += cm.at(k, c);
      actual += cm.at(c, k);
    }
    pr.precision[c] = percent(cm.at(c, c), predicted);
    pr.recall[c] = percent(cm.at(c, c), actual);
    if (predicted == 0 && actual == 0) continue;
    pr.included[c] = true;
    ++included;
    pr.macro_precision += pr.precision[c];
    pr.macro_recall += pr.recall[c];
  }
  if (included > 0) {
    pr.macro_precision /= static_cast<double>(included);
    pr.macro_recall /= static_cast<double>(included);
  }
  return pr;
}

std::size_t segment_count(const LabelSequence& seq) {
  if (seq.empty()) throw DataError("segment_count of an empty sequence");
  std::size_t runs = 1;
  for (std::size_t t = 1; t < seq.size(); ++t) runs += seq[t] != seq[t - 1] ? 1 : 0;
  return runs;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  // Sorted summation keeps the result independent of input order.
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  out.mean = sum / static_cast<double>(sorted.size());
  double sq = 0.0;
  for (double v : sorted) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(sorted.size()));
  return out;
}

StageMetrics MetricsReport::headline(Pooling pooling) const {
  if (pooling == Pooling::Frame) return stage_pooled.back();
  const auto& agg = stage_aggregate.back();
  StageMetrics m;
  m.accuracy = agg.accuracy.mean;
  m.macro_precision = agg.precision.mean;
  m.macro_recall = agg.recall.mean;
  return m;
}

VideoMetrics video_metrics(const VideoPredictions& video, std::size_t classes) {
  if (video.stage_predictions.empty()) throw DataError(video.video_id + ": no stage predictions");
  VideoMetrics vm;
  vm.video_id = video.video_id;
  vm.frames = video.gt.size();
  vm.gt_segments = segment_count(video.gt);
  for (const auto& pred : video.stage_predictions) {
    vm.stages.push_back(stage_metrics_from(confusion_matrix(pred, video.gt, classes), &pred));
  }
  vm.final_stage = precision_recall(video.stage_predictions.back(), video.gt, classes);
  return vm;
}

MetricsReport build_report(std::span<const VideoPredictions> videos, std::size_t classes) {
  if (videos.empty()) throw DataError("cannot build a metrics report for an empty split");
  MetricsReport report;
  const std::size_t stages = videos.front().stage_predictions.size();
  std::vector<ConfusionMatrix> pooled(stages, ConfusionMatrix{classes, std::vector<std::uint64_t>(classes * classes, 0)});
  for (const auto& video : videos) {
    if (video.stage_predictions.size() != stages) throw ShapeError(video.video_id + ": inconsistent stage count");
    report.per_video.push_back(video_metrics(video, classes));
    for (std::size_t m = 0; m < stages; ++m) {
      const auto cm = confusion_matrix(video.stage_predictions[m], video.gt, classes);
      for (std::size_t n = 0; n < cm.counts.size(); ++n) pooled[m].counts[n] += cm.counts[n];
    }
  }
  for (std::size_t m = 0; m < stages; ++m) {
    std::vector<double> acc, prec, rec;
    for (const auto& vm : report.per_video) {
      acc.push_back(vm.stages[m].accuracy);
      prec.push_back(vm.stages[m].macro_precision);
      rec.push_back(vm.stages[m].macro_recall);
    }
    report.stage_aggregate.push_back({mean_std(acc), mean_std(prec), mean_std(rec)});
    report.stage_pooled.push_back(stage_metrics_from(pooled[m], nullptr));
  }
  return report;
}

AggregateMetrics aggregate_runs(std::span<const RunSummary> runs) {
  if (runs.empty()) throw DataError("cannot aggregate zero runs");
  std::vector<double> acc, prec, rec;
  for (const auto& r : runs) {
    acc.push_back(r.accuracy);
    prec.push_back(r.precision);
    rec.push_back(r.recall);
  }
  return {mean_std(acc), mean_std(prec), mean_std(rec)};
}

nlohmann::json report_to_json(const MetricsReport& report) {
  using nlohmann::json;
  json videos = json::array();
  for (const auto& vm : report.per_video) {
    json stages = json::array();
    for (const auto& s : vm.stages) {
      stages.push_back({{"accuracy", s.accuracy},
                        {"macro_precision", s.macro_precision},
                        {"macro_recall", s.macro_recall},
                        {"segments", s.segments}});
    }
    videos.push_back({{"video_id", vm.video_id},
                      {"frames", vm.frames},
                      {"accuracy", vm.accuracy()},
                      {"precision", vm.final_stage.precision},
                      {"recall", vm.final_stage.recall},
                      {"macro_precision", vm.final_stage.macro_precision},
                      {"macro_recall", vm.final_stage.macro_recall},
                      {"gt_segments", vm.gt_segments},
                      {"stages", stages}});
  }
  auto ms = [](const MeanStd& v) { return json{{"mean", v.mean}, {"std", v.std}}; };
  json per_stage = json::array();
  for (std::size_t m = 0; m < report.stage_aggregate.size(); ++m) {
    const auto& a = report.stage_aggregate[m];
    const auto& p = report.stage_pooled[m];
    per_stage.push_back({{"stage", m + 1},
                         {"accuracy", ms(a.accuracy)},
                         {"precision", ms(a.precision)},
                         {"recall", ms(a.recall)},
                         {"pooled", {{"accuracy", p.accuracy}, {"precision", p.macro_precision}, {"recall", p.macro_recall}}}});
  }
  const auto& agg = report.aggregate();
  return {{"aggregate", {{"accuracy", ms(agg.accuracy)}, {"precision", ms(agg.precision)}, {"recall", ms(agg.recall)}}},
          {"stages", per_stage},
          {"per_video", videos}};
}

std::string report_to_table(const MetricsReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(16) << "video" << std::right << std::setw(10) << "Acc" << std::setw(10) << "Prec"
      << std::setw(10) << "Rec" << std::setw(10) << "GTseg";
  const std::size_t stages = report.stage_aggregate.size();
  for (std::size_t m = 0; m < stages; ++m) out << std::setw(8) << ("S" + std::to_string(m + 1) + "seg");
  out << '\n';
  for (const auto& vm : report.per_video) {
    out << std::left << std::setw(16) << vm.video_id << std::right << std::setw(10) << vm.accuracy() << std::setw(10)
        << vm.final_stage.macro_precision << std::setw(10) << vm.final_stage.macro_recall << std::setw(10)
        << vm.gt_segments;
    for (const auto& s : vm.stages) out << std::setw(8) << s.segments;
    out << '\n';
  }
  for (std::size_t m = 0; m < stages; ++m) {
    const auto& a = report.stage_aggregate[m];
    out << std::left << std::setw(16) << ("stage " + std::to_string(m + 1)) << std::right << std::setw(7)
        << a.accuracy.mean << " +- " << a.accuracy.std << std::setw(7) << a.precision.mean << " +- "
        << a.precision.std << std::setw(7) << a.recall.mean << " +- " << a.recall.std << '\n';
  }
  const auto& p = report.stage_pooled.back();
  out << std::left << std::setw(16) << "pooled" << std::right << std::setw(10) << p.accuracy << std::setw(10)
      << p.macro_precision << std::setw(10) << p.macro_recall << '\n';
  return out.str();
}

std::string phase_color(std::size_t phase) {
  // Ten distinguishable colours, cycled for larger phase counts.
  static constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[phase % 10];
}

std::string render_ribbon(std::span<const VideoPredictions> videos, std::size_t classes) {
  constexpr double kWidth = 800.0;
  constexpr double kLabelWidth = 90.0;
  constexpr double kRow = 18.0;
  constexpr double kGap = 4.0;
  constexpr double kVideoGap = 16.0;

  std::size_t rows = 0;
  for (const auto& v : videos) rows += 1 + v.stage_predictions.size();
  const double height = 10.0 + static_cast<double>(rows) * (kRow + kGap) +
                        static_cast<double>(videos.size()) * (kVideoGap + kRow) + kRow * 2;

  std::ostringstream svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"monospace\" font-size=\"11\">\n",
                kLabelWidth + kWidth + 10.0, height);
  svg << buf;
  double y = 10.0;
  for (const auto& video : videos) {
    std::snprintf(buf, sizeof(buf), "<text x=\"0\" y=\"%.1f\">%s</text>\n", y + kRow * 0.75, video.video_id.c_str());
    svg << buf;
    y += kRow;
    std::vector<std::pair<std::string, const LabelSequence*>> seqs = {{"GT", &video.gt}};
    for (std::size_t m = 0; m < video.stage_predictions.size(); ++m) {
      seqs.emplace_back("Stage " + std::to_string(m + 1), &video.stage_predictions[m]);
    }
    for (const auto& [name, seq] : seqs) {
      if (seq->size() != video.gt.size()) throw ShapeError(video.video_id + ": ribbon rows differ in length");
      std::snprintf(buf, sizeof(buf), "<text x=\"0\" y=\"%.1f\">%s</text>\n", y + kRow * 0.75, name.c_str());
      svg << buf;
      const double scale = kWidth / static_cast<double>(seq->size());
      std::size_t start = 0;
      for (std::size_t t = 1; t <= seq->size(); ++t) {
        if (t < seq->size() && (*seq)[t] == (*seq)[start]) continue;
        std::snprintf(buf, sizeof(buf),
                      "<rect x=\"%.3f\" y=\"%.1f\" width=\"%.3f\" height=\"%.1f\" fill=\"%s\"/>\n",
                      kLabelWidth + static_cast<double>(start) * scale, y,
                      static_cast<double>(t - start) * scale, kRow,
                      phase_color(static_cast<std::size_t>((*seq)[start])).c_str());
        svg << buf;
        start = t;
      }
      y += kRow + kGap;
    }
    y += kVideoGap;
  }
  // Legend.
  for (std::size_t c = 0; c < classes; ++c) {
    const double x = kLabelWidth + static_cast<double>(c) * 60.0;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">P%zu</text>\n",
                  x, y, phase_color(c).c_str(), x + 16.0, y + 10.0, c + 1);
    svg << buf;
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_ribbon(std::span<const VideoPredictions> videos, std::size_t classes, const std::filesystem::path& path) {
  const std::string doc = render_ribbon(videos, classes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out << doc;
  if (!out) throw FileError("failed writing " + path.string());
}

}  // namespace tecno
