#include "tecno/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"

namespace tecno {

using nlohmann::json;

namespace {

constexpr char kFeatureMagic[8] = {'T', 'E', 'C', 'N', 'O', 'F', 'T', '1'};
constexpr std::uint32_t kFeatureVersion = 1;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw FileError("failed writing " + path.string());
}

template <typename V>
V field(const json& j, const char* key, const std::filesystem::path& path) {
  if (!j.contains(key)) throw FormatError(path.string() + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": field \"" + key + "\" has the wrong type");
  }
}

}  // namespace

void VideoRecord::validate() const {
  if (features.timesteps() != labels.size()) {
    throw DataError(video_id + ": " + std::to_string(features.timesteps()) + " feature frames but " +
                    std::to_string(labels.size()) + " labels");
  }
  const auto classes = static_cast<std::int32_t>(num_classes());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || labels[t] >= classes) {
      throw DataError(video_id + ": label " + std::to_string(labels[t]) + " at frame " + std::to_string(t) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

void DatasetSplit::validate_disjoint() const {
  std::set<std::string> seen;
  for (const auto* list : {&train, &validation, &test}) {
    for (const auto& id : *list) {
      if (!seen.insert(id).second) throw DataError("video id \"" + id + "\" appears in more than one split");
    }
  }
}

ClassWeights compute_mfb_weights(std::span<const std::uint64_t> label_counts) {
  double total = 0.0;
  for (auto c : label_counts) total += static_cast<double>(c);
  if (label_counts.empty() || total <= 0.0) throw DataError("median frequency balancing needs a positive class count");

  std::vector<double> freqs(label_counts.size(), 0.0);
  std::vector<double> present;
  for (std::size_t c = 0; c < label_counts.size(); ++c) {
    if (label_counts[c] == 0) continue;
    freqs[c] = static_cast<double>(label_counts[c]) / total;
    present.push_back(freqs[c]);
  }
  std::sort(present.begin(), present.end());
  const std::size_t n = present.size();
  const double median = n % 2 == 1 ? present[n / 2] : (present[n / 2 - 1] + present[n / 2]) / 2.0;

  ClassWeights result;
  result.weights.assign(label_counts.size(), 0.0);
  for (std::size_t c = 0; c < label_counts.size(); ++c) {
    if (label_counts[c] > 0) result.weights[c] = median / freqs[c];
  }
  return result;
}

std::vector<std::uint64_t> count_labels(std::span<const VideoRecord> records, std::size_t num_classes) {
  std::vector<std::uint64_t> counts(num_classes, 0);
  for (const auto& record : records) {
    for (auto y : record.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw LabelError(record.video_id + ": label " + std::to_string(y) + " outside [0, " +
                         std::to_string(num_classes) + ")");
      }
      ++counts[static_cast<std::size_t>(y)];
    }
  }
  return counts;
}

void write_features(const std::filesystem::path& path, const FeatureSequence& features) {
  if (features.empty()) throw FormatError("refusing to write an empty feature sequence to " + path.string());
  if (features.channels() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("feature dimension exceeds u32 for " + path.string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  detail::put_le<std::uint32_t>(out, kFeatureVersion);
  detail::put_le<std::uint64_t>(out, features.timesteps());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.channels()));
  for (std::size_t t = 0; t < features.timesteps(); ++t) {
    for (std::size_t d = 0; d < features.channels(); ++d) detail::put_f32(out, features(d, t));
  }
  if (!out) throw FileError("failed writing " + path.string());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  char magic[sizeof(kFeatureMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + ": bad magic, expected TECNOFT1");
  }
  std::uint32_t version = 0;
  std::uint64_t steps = 0;
  std::uint32_t dim = 0;
  if (!detail::get_le(in, version)) throw FormatError(path.string() + ": truncated header (version)");
  if (version != kFeatureVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  if (!detail::get_le(in, steps) || !detail::get_le(in, dim)) throw FormatError(path.string() + ": truncated header");
  if (steps == 0) throw FormatError(path.string() + ": feature file has 0 timesteps");
  if (dim == 0) throw FormatError(path.string() + ": feature file has dimension 0");

  constexpr std::uint64_t header_size = sizeof(kFeatureMagic) + 4 + 8 + 4;
  const std::uint64_t max_values = std::numeric_limits<std::uint64_t>::max() / 4;
  if (steps > max_values / dim) throw FormatError(path.string() + ": T x D overflows");
  const std::uint64_t payload = steps * dim * 4;
  if (file_size < header_size || file_size - header_size < payload) {
    throw FormatError(path.string() + ": truncated payload, header claims " + std::to_string(steps) + "x" +
                      std::to_string(dim) + " values");
  }

  FeatureSequence features(dim, static_cast<std::size_t>(steps));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      float v = 0.0f;
      if (!detail::get_f32(in, v)) throw FormatError(path.string() + ": truncated payload");
      features(d, t) = v;
    }
  }
  return features;
}

void write_labels(const std::filesystem::path& path, const LabelFile& labels) {
  write_json_file(path, {{"video_id", labels.video_id},
                         {"fps", labels.fps},
                         {"num_classes", labels.num_classes},
                         {"phase_names", labels.phase_names},
                         {"labels", labels.labels}});
}

LabelFile read_labels(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw FormatError(path.string() + ": label file must be a JSON object");
  LabelFile file;
  file.video_id = field<std::string>(j, "video_id", path);
  file.fps = field<double>(j, "fps", path);
  file.num_classes = field<std::size_t>(j, "num_classes", path);
  file.phase_names = field<std::vector<std::string>>(j, "phase_names", path);
  file.labels = field<LabelSequence>(j, "labels", path);
  if (!(file.fps > 0.0)) throw FormatError(path.string() + ": fps must be positive");
  if (file.num_classes < 1) throw FormatError(path.string() + ": num_classes must be positive");
  if (file.phase_names.size() != file.num_classes) {
    throw FormatError(path.string() + ": phase_names has " + std::to_string(file.phase_names.size()) +
                      " entries, num_classes is " + std::to_string(file.num_classes));
  }
  if (file.labels.empty()) throw FormatError(path.string() + ": labels is empty");
  for (std::size_t t = 0; t < file.labels.size(); ++t) {
    if (file.labels[t] < 0 || static_cast<std::size_t>(file.labels[t]) >= file.num_classes) {
      throw FormatError(path.string() + ": labels[" + std::to_string(t) + "] = " + std::to_string(file.labels[t]) +
                        " outside [0, " + std::to_string(file.num_classes) + ")");
    }
  }
  return file;
}

void write_split(const std::filesystem::path& path, const DatasetSplit& split) {
  write_json_file(path, {{"train", split.train}, {"validation", split.validation}, {"test", split.test}});
}

DatasetSplit read_split(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw FormatError(path.string() + ": split file must be a JSON object");
  DatasetSplit split;
  split.train = field<std::vector<std::string>>(j, "train", path);
  split.validation = field<std::vector<std::string>>(j, "validation", path);
  split.test = field<std::vector<std::string>>(j, "test", path);
  try {
    split.validate_disjoint();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return split;
}

void write_record(const std::filesystem::path& dir, const VideoRecord& record) {
  write_features(dir / (record.video_id + ".feat"), record.features);
  write_labels(dir / (record.video_id + ".labels.json"),
               {record.video_id, record.fps, record.num_classes(), record.phase_names, record.labels});
}

VideoRecord read_record(const std::filesystem::path& dir, const std::string& video_id) {
  const auto label_path = dir / (video_id + ".labels.json");
  LabelFile labels = read_labels(label_path);
  VideoRecord record{video_id, labels.fps, read_features(dir / (video_id + ".feat")), std::move(labels.labels),
                     std::move(labels.phase_names)};
  if (record.features.timesteps() != record.labels.size()) {
    throw DataError(label_path.string() + ": " + std::to_string(record.labels.size()) + " labels but " +
                    std::to_string(record.features.timesteps()) + " feature frames");
  }
  return record;
}

DatasetSplit split_dataset(std::span<const std::string> video_ids, const SplitFractions& fractions,
                           std::uint64_t seed, bool require_all_nonempty) {
  if (video_ids.empty()) throw DataError("cannot split an empty record list");
  const std::array<double, 3> f = {fractions.train, fractions.validation, fractions.test};
  for (double value : f) {
    if (!(value >= 0.0) || value > 1.0) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");

  std::vector<std::string> ids(video_ids.begin(), video_ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto n = static_cast<double>(ids.size());
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = f[s] * n;
    sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[s] = exact - static_cast<double>(sizes[s]);
    assigned += sizes[s];
  }
  while (assigned < ids.size()) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < 3; ++s) {
      if (remainder[s] > remainder[best] + 1e-12) best = s;
    }
    ++sizes[best];
    remainder[best] = -1.0;
    ++assigned;
  }

  if (require_all_nonempty) {
    static constexpr const char* names[] = {"train", "validation", "test"};
    for (std::size_t s = 0; s < 3; ++s) {
      if (sizes[s] == 0) {
        throw ConfigError(std::string("split fractions leave the ") + names[s] + " split empty for " +
                          std::to_string(ids.size()) + " videos");
      }
    }
  }

  DatasetSplit split;
  const std::array<std::vector<std::string>*, 3> lists = {&split.train, &split.validation, &split.test};
  auto it = ids.begin();
  for (std::size_t s = 0; s < 3; ++s) {
    lists[s]->assign(it, it + static_cast<std::ptrdiff_t>(sizes[s]));
    it += static_cast<std::ptrdiff_t>(sizes[s]);
  }
  return split;
}

void SynthConfig::validate() const {
  if (num_classes < 2) throw ConfigError("synth.num_classes must be >= 2");
  if (num_videos < 1) throw ConfigError("synth.num_videos must be >= 1");
  if (min_frames < 1) throw ConfigError("synth.min_frames must be >= 1");
  if (min_frames > max_frames) throw ConfigError("synth.min_frames must not exceed synth.max_frames");
  if (feature_dim < 1) throw ConfigError("synth.feature_dim must be >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("synth.noise_std must be >= 0");
  if (!(skip_prob >= 0.0) || !(skip_prob < 1.0)) throw ConfigError("synth.skip_prob must lie in [0, 1)");
  if (!(fps > 0.0)) throw ConfigError("synth.fps must be positive");
}

namespace {

std::vector<std::vector<float>> draw_embeddings(const SynthConfig& config, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<float>> embeddings;
  std::vector<std::vector<double>> basis;
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    std::vector<double> v(config.feature_dim);
    double norm = 0.0;
    const bool orthogonal = c < config.feature_dim;
    do {
      for (double& x : v) x = gauss(rng);
      if (orthogonal) {
        for (const auto& prev : basis) {
          double proj = 0.0;
          for (std::size_t d = 0; d < v.size(); ++d) proj += v[d] * prev[d];
          for (std::size_t d = 0; d < v.size(); ++d) v[d] -= proj * prev[d];
        }
      }
      norm = 0.0;
      for (double x : v) norm += x * x;
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    std::vector<float> unit(config.feature_dim);
    for (std::size_t d = 0; d < v.size(); ++d) unit[d] = static_cast<float>(v[d]);
    embeddings.push_back(std::move(unit));
    if (orthogonal) basis.push_back(std::move(v));
  }
  return embeddings;
}

}  // namespace

std::vector<std::vector<float>> synth_embeddings(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  return draw_embeddings(config, rng);
}

std::vector<VideoRecord> synth_generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto embeddings = draw_embeddings(config, rng);

  const std::size_t classes = config.num_classes;
  const std::size_t lo = std::max<std::size_t>(1, config.min_frames / classes);
  const std::size_t hi = std::max(lo, config.max_frames / classes);
  std::uniform_int_distribution<std::size_t> duration(lo, hi);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, config.noise_std > 0.0 ? config.noise_std : 1.0);

  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back("P" + std::to_string(c + 1));

  std::vector<VideoRecord> videos;
  videos.reserve(config.num_videos);
  for (std::size_t v = 0; v < config.num_videos; ++v) {
    std::vector<std::size_t> phases;
    for (std::size_t c = 0; c < classes; ++c) {
      if (config.skip_prob > 0.0 && coin(rng) < config.skip_prob) continue;
      phases.push_back(c);
    }
    if (phases.empty()) phases.push_back(std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng));

    LabelSequence labels;
    std::vector<std::size_t> boundaries;  // first frame of every segment after the first
    for (std::size_t p : phases) {
      if (!labels.empty()) boundaries.push_back(labels.size());
      labels.insert(labels.end(), duration(rng), static_cast<std::int32_t>(p));
    }
    const std::size_t steps = labels.size();
    const std::size_t dim = config.feature_dim;

    FeatureSequence features(dim, steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto& e = embeddings[static_cast<std::size_t>(labels[t])];
      for (std::size_t d = 0; d < dim; ++d) features(d, t) = e[d];
    }
    // Window of transition_blend frames centred on each boundary; mixing
    // weight (i + 0.5) / B for the i-th frame of the window.
    const std::size_t blend = config.transition_blend;
    for (std::size_t b : boundaries) {
      if (blend == 0) break;
      const auto& from = embeddings[static_cast<std::size_t>(labels[b - 1])];
      const auto& to = embeddings[static_cast<std::size_t>(labels[b])];
      const auto start = static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(blend / 2);
      for (std::size_t i = 0; i < blend; ++i) {
        const std::ptrdiff_t t = start + static_cast<std::ptrdiff_t>(i);
        if (t < 0 || t >= static_cast<std::ptrdiff_t>(steps)) continue;
        const double alpha = (static_cast<double>(i) + 0.5) / static_cast<double>(blend);
        for (std::size_t d = 0; d < dim; ++d) {
          features(d, static_cast<std::size_t>(t)) = static_cast<float>((1.0 - alpha) * from[d] + alpha * to[d]);
        }
      }
    }
    if (config.noise_std > 0.0) {
      for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t d = 0; d < dim; ++d) features(d, t) += static_cast<float>(noise(rng));
      }
    }

    char id[32];
    std::snprintf(id, sizeof(id), "video_%03zu", v);
    videos.push_back({id, config.fps, std::move(features), std::move(labels), names});
  }
  return videos;
}

}  // namespace tecno
