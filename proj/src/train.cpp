#include "tecno/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace tecno {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (seeds_for_repetition < 1) throw ConfigError("seeds_for_repetition must be >= 1");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

json train_config_to_json(const TrainConfig& config) {
  return {{"arch", arch_to_json(config.arch)},
          {"lr", config.lr},
          {"epochs", config.epochs},
          {"seed", config.seed},
          {"seeds_for_repetition", config.seeds_for_repetition},
          {"detach_inter_stage", config.detach_inter_stage},
          {"grad_clip", config.grad_clip},
          {"jobs", config.jobs},
          {"data_dir", config.data_dir.string()},
          {"split_file", config.split_file.string()},
          {"checkpoint", config.checkpoint_path.string()},
          {"log", config.log_path.string()}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::set<std::string> known = {"arch",      "lr",   "epochs",   "seed",       "seeds_for_repetition",
                                              "detach_inter_stage", "grad_clip", "jobs", "data_dir", "split_file",
                                              "checkpoint", "log"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown train config field \"" + key + "\"");
  }
  TrainConfig config;
  // input_dim and num_classes left at 0 are taken from the data.
  ArchConfig defaults;
  defaults.input_dim = 0;
  defaults.num_classes = 0;
  config.arch = j.contains("arch") ? arch_from_json(j.at("arch"), defaults) : defaults;
  try {
    config.lr = j.value("lr", config.lr);
    config.epochs = j.value("epochs", config.epochs);
    config.seed = j.value("seed", config.seed);
    config.seeds_for_repetition = j.value("seeds_for_repetition", config.seeds_for_repetition);
    config.detach_inter_stage = j.value("detach_inter_stage", config.detach_inter_stage);
    config.grad_clip = j.value("grad_clip", config.grad_clip);
    config.jobs = j.value("jobs", config.jobs);
    config.data_dir = j.value("data_dir", std::string{});
    config.split_file = j.value("split_file", std::string{});
    config.checkpoint_path = j.value("checkpoint", std::string{});
    config.log_path = j.value("log", std::string{});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config field has the wrong type: ") + e.what());
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  try {
    return train_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json epoch_log_to_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"train_loss", log.train_loss},
          {"stage_losses", log.stage_losses},
          {"train_accuracy", log.train_accuracy},
          {"val_accuracy", log.val_accuracy},
          {"val_precision", log.val_precision},
          {"val_recall", log.val_recall},
          {"seconds", log.seconds}};
}

Dataset load_dataset(const std::filesystem::path& data_dir, const DatasetSplit& split) {
  split.validate_disjoint();
  Dataset data;
  for (const auto& id : split.train) data.train.push_back(read_record(data_dir, id));
  for (const auto& id : split.validation) data.validation.push_back(read_record(data_dir, id));
  for (const auto& id : split.test) data.test.push_back(read_record(data_dir, id));
  return data;
}

Dataset load_dataset(const TrainConfig& config) {
  if (config.split_file.empty()) throw ConfigError("split_file is not set");
  return load_dataset(config.data_dir, read_split(config.split_file));
}

Checkpoint TrainResult::checkpoint(const TrainConfig& config) const {
  Checkpoint ckpt{best, config.seed, json::object()};
  ckpt.training = {{"best_epoch", best_epoch},
                   {"best_val_accuracy", best_val_accuracy},
                   {"total_steps", total_steps},
                   {"class_weights", class_weights},
                   {"config", train_config_to_json(config)}};
  return ckpt;
}

namespace {

ArchConfig resolve_arch(ArchConfig arch, const Dataset& data) {
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.validation.empty()) throw DataError("validation split is empty");
  const auto& first = data.train.front();
  if (arch.input_dim == 0) arch.input_dim = first.features.channels();
  if (arch.num_classes == 0) arch.num_classes = first.num_classes();
  arch.validate();
  for (const auto* split : {&data.train, &data.validation, &data.test}) {
    for (const auto& v : *split) {
      if (v.features.channels() != arch.input_dim) {
        throw ShapeError(v.video_id + ": feature dimension " + std::to_string(v.features.channels()) +
                         " does not match arch.input_dim " + std::to_string(arch.input_dim));
      }
      for (auto y : v.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= arch.num_classes) {
          throw DataError(v.video_id + ": label " + std::to_string(y) + " outside [0, " +
                          std::to_string(arch.num_classes) + ")");
        }
      }
    }
  }
  return arch;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t n = 0; n < count; ++n) fn(n);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t n = next++; n < count; n = next++) {
        try {
          fn(n);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

double mean_accuracy(const ModelParams<float>& params, std::span<const VideoRecord> videos, std::size_t jobs) {
  std::vector<double> acc(videos.size());
  parallel_for(videos.size(), jobs, [&](std::size_t n) {
    acc[n] = accuracy(predict_labels(multistage_forward(videos[n].features, params)), videos[n].labels);
  });
  return mean_std(acc).mean;
}

}  // namespace

std::vector<VideoPredictions> predict_split(const ModelParams<float>& params, std::span<const VideoRecord> videos,
                                            std::size_t jobs) {
  std::vector<VideoPredictions> out(videos.size());
  parallel_for(videos.size(), jobs, [&](std::size_t n) {
    const auto& video = videos[n];
    const auto preds = multistage_forward(video.features, params);
    out[n].video_id = video.video_id;
    out[n].gt = video.labels;
    for (const auto& probs : preds.per_stage_probs) out[n].stage_predictions.push_back(argmax_labels(probs));
  });
  return out;
}

MetricsReport evaluate_split(const ModelParams<float>& params, std::span<const VideoRecord> videos,
                             const EvalOptions& options) {
  if (videos.empty()) throw DataError("cannot evaluate an empty split");
  for (const auto& v : videos) {
    if (v.features.channels() != params.config.input_dim) {
      throw ShapeError(v.video_id + ": feature dimension " + std::to_string(v.features.channels()) +
                       " does not match checkpoint input_dim " + std::to_string(params.config.input_dim));
    }
  }
  const auto preds = predict_split(params, videos, options.jobs);
  return build_report(preds, params.config.num_classes);
}

TrainResult train_run(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch) {
  config.validate();
  const ArchConfig arch = resolve_arch(config.arch, data);
  const std::size_t classes = arch.num_classes;

  TrainResult result;
  const auto counts = count_labels(data.train, classes);
  result.class_weights = compute_mfb_weights(counts).weights;
  for (const auto* split : {&data.validation, &data.test}) {
    const auto other = count_labels(*split, classes);
    for (std::size_t c = 0; c < classes; ++c) {
      if (other[c] > 0 && counts[c] == 0) {
        result.warnings.push_back("class " + std::to_string(c) +
                                  " occurs outside the training split but not in it; its weight is 0");
      }
    }
  }
  std::vector<float> weights(result.class_weights.begin(), result.class_weights.end());

  ModelParams<float> params = init_params<float>(arch, config.seed);
  std::vector<float> flat = flatten(params);
  AdamState<float> adam = AdamState<float>::zeros(flat.size(), static_cast<float>(config.lr));

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    if (!log_file) throw FileError("cannot open log file " + config.log_path.string());
  }

  std::mt19937_64 order_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochLog log;
    log.epoch = epoch;
    log.stage_losses.assign(arch.num_stages, 0.0);
    for (std::size_t index : order) {
      const auto& video = data.train[index];
      auto step = multistage_backward(video.features, params, video.labels, std::span<const float>(weights),
                                      config.detach_inter_stage);
      if (!std::isfinite(step.loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", video " + video.video_id +
                           " (step " + std::to_string(result.total_steps + 1) + ")");
      }
      log.train_loss += step.loss.total;
      for (std::size_t m = 0; m < arch.num_stages; ++m) log.stage_losses[m] += step.loss.per_stage[m];

      std::vector<float> grads = flatten(step.grads);
      if (config.grad_clip > 0.0) {
        double norm = 0.0;
        for (float g : grads) norm += static_cast<double>(g) * g;
        norm = std::sqrt(norm);
        if (norm > config.grad_clip) {
          const auto scale = static_cast<float>(config.grad_clip / norm);
          for (float& g : grads) g *= scale;
        }
      }
      for (float g : grads) {
        if (!std::isfinite(g)) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", video " + video.video_id);
        }
      }
      adam_step(std::span<float>(flat), std::span<const float>(grads), adam);
      assign_flat(params, std::span<const float>(flat));
      ++result.total_steps;
    }
    const auto videos = static_cast<double>(data.train.size());
    log.train_loss /= videos;
    for (double& s : log.stage_losses) s /= videos;

    log.train_accuracy = mean_accuracy(params, data.train, config.jobs);
    const auto report = evaluate_split(params, data.validation, {config.jobs});
    const auto val = report.headline();
    log.val_accuracy = val.accuracy;
    log.val_precision = val.macro_precision;
    log.val_recall = val.macro_recall;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (log.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = log.val_accuracy;
      result.best_epoch = epoch;
      result.best = params;
    }
    if (log_file) {
      // Wall-clock time stays out of the file.
      json line = epoch_log_to_json(log);
      line.erase("seconds");
      log_file << line.dump() << '\n';
      log_file.flush();
    }
    if (on_epoch) on_epoch(log);
    result.logs.push_back(std::move(log));
  }
  if (!config.checkpoint_path.empty()) write_checkpoint(config.checkpoint_path, result.checkpoint(config));
  return result;
}

AblationReport ablate_stages(const TrainConfig& config, const Dataset& data, std::span<const std::size_t> stage_counts) {
  config.validate();
  if (data.test.empty()) throw DataError("ablation needs a non-empty test split");
  if (stage_counts.empty()) throw ConfigError("ablation needs at least one stage count");

  struct Job {
    std::size_t row;
    std::size_t rep;
  };
  std::vector<Job> jobs;
  AblationReport report;
  for (std::size_t r = 0; r < stage_counts.size(); ++r) {
    if (stage_counts[r] < 1) throw ConfigError("stage counts must be >= 1");
    report.rows.push_back({stage_counts[r], std::vector<RunSummary>(config.seeds_for_repetition), {}});
    for (std::size_t rep = 0; rep < config.seeds_for_repetition; ++rep) jobs.push_back({r, rep});
  }
  parallel_for(jobs.size(), config.jobs, [&](std::size_t n) {
    TrainConfig run = config;
    run.arch.num_stages = report.rows[jobs[n].row].num_stages;
    run.seed = config.seed + jobs[n].rep;
    run.jobs = 1;
    run.checkpoint_path.clear();
    run.log_path.clear();
    const auto trained = train_run(run, data);
    const auto metrics = evaluate_split(trained.best, data.test).headline();
    report.rows[jobs[n].row].runs[jobs[n].rep] = {metrics.accuracy, metrics.macro_precision, metrics.macro_recall};
  });
  for (auto& row : report.rows) row.test = aggregate_runs(row.runs);
  return report;
}

json ablation_to_json(const AblationReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    json runs = json::array();
    for (const auto& r : row.runs) runs.push_back({{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}});
    rows.push_back({{"num_stages", row.num_stages},
                    {"accuracy", {{"mean", row.test.accuracy.mean}, {"std", row.test.accuracy.std}}},
                    {"precision", {{"mean", row.test.precision.mean}, {"std", row.test.precision.std}}},
                    {"recall", {{"mean", row.test.recall.mean}, {"std", row.test.recall.std}}},
                    {"runs", runs}});
  }
  return {{"rows", rows}};
}

std::string ablation_to_table(const AblationReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(10) << "stages" << std::right << std::setw(18) << "Acc" << std::setw(18) << "Prec"
      << std::setw(18) << "Rec" << '\n';
  auto cell = [&](const MeanStd& v) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << v.mean << " +- " << v.std;
    out << std::setw(18) << c.str();
  };
  for (const auto& row : report.rows) {
    out << std::left << std::setw(10) << row.num_stages << std::right;
    cell(row.test.accuracy);
    cell(row.test.precision);
    cell(row.test.recall);
    out << '\n';
  }
  return out.str();
}

}  // namespace tecno
