#include "tecno/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tecno/checkpoint.hpp"
#include "tecno/data.hpp"
#include "tecno/metrics.hpp"
#include "tecno/stream.hpp"
#include "tecno/train.hpp"

namespace tecno::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FileError("failed writing " + path.string());
}

struct GenDataConfig {
  SynthConfig synth;
  SplitFractions fractions;
};

GenDataConfig gen_config_from_json(const json& j, const fs::path& path) {
  if (!j.is_object()) throw ConfigError(path.string() + ": synth config must be a JSON object");
  static const std::set<std::string> known = {"num_classes", "num_videos",       "min_frames", "max_frames",
                                              "feature_dim", "noise_std",        "transition_blend",
                                              "skip_prob",   "fps",              "seed",       "split"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(path.string() + ": unknown field \"" + key + "\"");
  }
  GenDataConfig config;
  auto& s = config.synth;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.num_videos = j.value("num_videos", s.num_videos);
    s.min_frames = j.value("min_frames", s.min_frames);
    s.max_frames = j.value("max_frames", s.max_frames);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.transition_blend = j.value("transition_blend", s.transition_blend);
    s.skip_prob = j.value("skip_prob", s.skip_prob);
    s.fps = j.value("fps", s.fps);
    s.seed = j.value("seed", s.seed);
    if (j.contains("split")) {
      const auto& f = j.at("split");
      for (const auto& [key, value] : f.items()) {
        if (key != "train" && key != "validation" && key != "test") {
          throw ConfigError(path.string() + ": unknown field \"split." + key + "\"");
        }
      }
      config.fractions.train = f.value("train", config.fractions.train);
      config.fractions.validation = f.value("validation", config.fractions.validation);
      config.fractions.test = f.value("test", config.fractions.test);
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": field has the wrong type: " + e.what());
  }
  return config;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
  std::string checkpoint;
};

int cmd_gen_data(const Common& common, std::ostream& out) {
  if (common.config.empty()) throw ConfigError("gen-data requires --config");
  if (common.out.empty()) throw ConfigError("gen-data requires --out");
  GenDataConfig config = gen_config_from_json(read_json(common.config), common.config);
  if (common.seed) config.synth.seed = *common.seed;

  const auto videos = synth_generate(config.synth);
  const fs::path dir = common.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FileError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> ids;
  for (const auto& v : videos) {
    write_record(dir, v);
    ids.push_back(v.video_id);
  }
  const auto split = split_dataset(ids, config.fractions, config.synth.seed);
  write_split(dir / "split.json", split);
  out << "wrote " << videos.size() << " videos to " << dir.string() << " (train " << split.train.size()
      << ", validation " << split.validation.size() << ", test " << split.test.size() << ")\n";
  return kOk;
}

void apply_overrides(TrainConfig& config, const Common& common, std::optional<std::size_t> stages, bool detach,
                     std::size_t jobs_count) {
  if (common.seed) config.seed = *common.seed;
  if (jobs_count > 0) config.jobs = common.jobs;
  if (stages) config.arch.num_stages = *stages;
  if (detach) config.detach_inter_stage = true;
}

int cmd_train(const Common& common, std::optional<std::size_t> stages, bool detach, std::size_t jobs_count,
              std::ostream& out, std::ostream& err) {
  if (common.config.empty()) throw ConfigError("train requires --config");
  TrainConfig config = load_train_config(common.config);
  apply_overrides(config, common, stages, detach, jobs_count);
  if (!common.out.empty()) config.checkpoint_path = common.out;
  if (!common.checkpoint.empty()) config.checkpoint_path = common.checkpoint;
  if (config.checkpoint_path.empty()) throw ConfigError(common.config + ": \"checkpoint\" is not set and no --out given");

  const Dataset data = load_dataset(config);
  const auto result = train_run(config, data, [&](const EpochLog& log) {
    err << "epoch " << log.epoch << " loss " << log.train_loss << " train_acc " << log.train_accuracy << " val_acc "
        << log.val_accuracy << " (" << log.seconds << " s)\n";
  });
  for (const auto& w : result.warnings) err << "warning: " << w << '\n';
  out << "best epoch " << result.best_epoch << " validation accuracy " << result.best_val_accuracy
      << "; checkpoint " << config.checkpoint_path.string() << '\n';
  return kOk;
}

const std::vector<VideoRecord>& pick_split(const Dataset& data, const std::string& name) {
  if (name == "train") return data.train;
  if (name == "validation") return data.validation;
  if (name == "test") return data.test;
  throw ConfigError("--split must be train, validation or test");
}

int cmd_eval(const Common& common, const std::string& split_name, std::ostream& out) {
  if (common.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  const Checkpoint ckpt = read_checkpoint(common.checkpoint);
  TrainConfig config;
  if (!common.config.empty()) {
    config = load_train_config(common.config);
  } else if (ckpt.training.contains("config")) {
    config = train_config_from_json(ckpt.training.at("config"));
  } else {
    throw ConfigError(common.checkpoint + ": checkpoint carries no training config; pass --config");
  }
  const Dataset data = load_dataset(config);
  const auto& videos = pick_split(data, split_name);
  if (videos.empty()) throw DataError("split \"" + split_name + "\" is empty");

  for (const auto& v : videos) {
    if (v.features.channels() != ckpt.params.config.input_dim) {
      throw ShapeError(v.video_id + ": feature dimension does not match checkpoint input_dim");
    }
  }
  const auto preds = predict_split(ckpt.params, videos, common.jobs);
  const auto report = build_report(preds, ckpt.params.config.num_classes);
  out << report_to_table(report);
  if (!common.out.empty()) {
    const fs::path dir = common.out;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FileError("cannot create output directory " + dir.string() + ": " + ec.message());
    write_text(dir / ("report_" + split_name + ".json"), report_to_json(report).dump(2) + "\n");
    write_text(dir / ("report_" + split_name + ".txt"), report_to_table(report));
    emit_ribbon(preds, ckpt.params.config.num_classes, dir / ("ribbon_" + split_name + ".svg"));
  }
  return kOk;
}

int cmd_infer(const Common& common, const std::string& input, std::ostream& out) {
  if (common.checkpoint.empty()) throw ConfigError("infer requires --checkpoint");
  if (input.empty()) throw ConfigError("infer requires --input");
  const Checkpoint ckpt = read_checkpoint(common.checkpoint);
  const FeatureSequence features = read_features(input);
  if (features.channels() != ckpt.params.config.input_dim) {
    throw ShapeError(input + ": feature dimension " + std::to_string(features.channels()) +
                     " does not match checkpoint input_dim " + std::to_string(ckpt.params.config.input_dim));
  }
  const auto preds = multistage_forward(features, ckpt.params);
  json stages = json::array();
  for (const auto& probs : preds.per_stage_probs) stages.push_back(argmax_labels(probs));
  json probs = json::array();
  const auto& final_probs = preds.final_probs();
  for (std::size_t t = 0; t < final_probs.timesteps(); ++t) {
    json column = json::array();
    for (std::size_t c = 0; c < final_probs.channels(); ++c) column.push_back(final_probs(c, t));
    probs.push_back(std::move(column));
  }
  const json doc = {{"frames", features.timesteps()},
                    {"phases", predict_labels(preds)},
                    {"stage_phases", stages},
                    {"probs", probs}};
  if (common.out.empty()) {
    out << doc.dump() << '\n';
  } else {
    write_text(common.out, doc.dump() + "\n");
  }
  return kOk;
}

// Input records: u32 little-endian length D, then D little-endian f32.
int cmd_stream(const Common& common, std::istream& in, std::ostream& out) {
  if (common.checkpoint.empty()) throw ConfigError("stream requires --checkpoint");
  auto params = std::make_shared<const ModelParams<float>>(read_checkpoint(common.checkpoint).params);
  StreamSession<float> session(params);
  std::vector<float> frame;
  while (true) {
    unsigned char len_bytes[4];
    in.read(reinterpret_cast<char*>(len_bytes), 4);
    if (in.gcount() == 0) break;
    if (in.gcount() != 4) throw FormatError("stdin: truncated frame length at frame " + std::to_string(session.frames_seen() + 1));
    const std::uint32_t dim = static_cast<std::uint32_t>(len_bytes[0]) | static_cast<std::uint32_t>(len_bytes[1]) << 8 |
                              static_cast<std::uint32_t>(len_bytes[2]) << 16 | static_cast<std::uint32_t>(len_bytes[3]) << 24;
    if (dim != params->config.input_dim) {
      throw ShapeError("stdin: frame " + std::to_string(session.frames_seen() + 1) + " has dimension " +
                       std::to_string(dim) + ", model expects " + std::to_string(params->config.input_dim));
    }
    frame.resize(dim);
    for (auto& v : frame) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError("stdin: truncated frame payload at frame " + std::to_string(session.frames_seen() + 1));
      }
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                                 static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
      v = std::bit_cast<float>(bits);
    }
    const auto& probs = session.push(frame).back();
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = c;
    }
    out << json{{"t", session.frames_seen()}, {"phase", best}, {"probs", probs}}.dump() << '\n';
    out.flush();
  }
  return kOk;
}

std::vector<std::size_t> parse_stage_counts(const std::string& text) {
  std::vector<std::size_t> counts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long value = std::stol(item, &used);
      if (used != item.size() || value < 1) throw std::invalid_argument(item);
      counts.push_back(static_cast<std::size_t>(value));
    } catch (const std::exception&) {
      throw ConfigError("--stage-counts entries must be positive integers, got \"" + item + "\"");
    }
  }
  if (counts.empty()) throw ConfigError("--stage-counts is empty");
  return counts;
}

int cmd_ablate(const Common& common, const std::string& stage_counts, bool detach, std::size_t jobs_count,
               std::ostream& out) {
  if (common.config.empty()) throw ConfigError("ablate requires --config");
  TrainConfig config = load_train_config(common.config);
  apply_overrides(config, common, std::nullopt, detach, jobs_count);
  const auto counts = parse_stage_counts(stage_counts);
  const Dataset data = load_dataset(config);
  const auto report = ablate_stages(config, data, counts);
  out << ablation_to_table(report);
  if (!common.out.empty()) write_text(common.out, ablation_to_json(report).dump(2) + "\n");
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal multi-stage temporal convolutional network for online phase recognition", "tecno"};
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  std::optional<std::size_t> stages;
  bool detach = false;
  std::string split_name = "test";
  std::string input;
  std::string stage_counts = "1,2,3";

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { common.seed = v; },
                                            "Seed overriding the config");
  };
  auto add_jobs = [&](CLI::App* sub) {
    return sub->add_option("--jobs", common.jobs, "Worker threads for independent videos/runs")
        ->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic workflow dataset");
  gen->add_option("--config", common.config, "Synthetic data config (JSON)")->required();
  gen->add_option("--out", common.out, "Output directory")->required();
  add_seed(gen);

  auto* train = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  train->add_option("--config", common.config, "Training config (JSON)")->required();
  train->add_option("--out,--checkpoint", common.out, "Checkpoint path overriding the config");
  add_seed(train);
  auto* train_jobs = add_jobs(train);
  train->add_option_function<std::size_t>("--stages", [&](const std::size_t& v) { stages = v; }, "Number of stages")
      ->check(CLI::PositiveNumber);
  train->add_flag("--detach-inter-stage", detach, "Stop gradients between stages");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", common.checkpoint, "Checkpoint path")->required();
  eval->add_option("--split", split_name, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  eval->add_option("--config", common.config, "Training config (defaults to the one stored in the checkpoint)");
  eval->add_option("--out", common.out, "Directory for report JSON, text table and ribbon SVG");
  add_seed(eval);
  add_jobs(eval);

  auto* infer = app.add_subcommand("infer", "Offline inference on one feature file");
  infer->add_option("--checkpoint", common.checkpoint, "Checkpoint path")->required();
  infer->add_option("--input", input, "Feature file (TECNOFT1)")->required();
  infer->add_option("--out", common.out, "Output JSON path (default stdout)");
  add_seed(infer);

  auto* stream = app.add_subcommand("stream", "Online inference: length-prefixed f32 frames on stdin, JSON lines out");
  stream->add_option("--checkpoint", common.checkpoint, "Checkpoint path")->required();
  add_seed(stream);

  auto* ablate = app.add_subcommand("ablate", "Train one model per stage count and seed, report test metrics");
  ablate->add_option("--config", common.config, "Training config (JSON)")->required();
  ablate->add_option("--stage-counts", stage_counts, "Comma-separated stage counts (default 1,2,3)");
  ablate->add_option("--out", common.out, "Output JSON path");
  add_seed(ablate);
  auto* ablate_jobs = add_jobs(ablate);
  ablate->add_flag("--detach-inter-stage", detach, "Stop gradients between stages");

  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (train->parsed()) return cmd_train(common, stages, detach, train_jobs->count(), out, err);
    if (eval->parsed()) return cmd_eval(common, split_name, out);
    if (infer->parsed()) return cmd_infer(common, input, out);
    if (stream->parsed()) return cmd_stream(common, in, out);
    if (ablate->parsed()) return cmd_ablate(common, stage_counts, detach, ablate_jobs->count(), out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace tecno::cli
