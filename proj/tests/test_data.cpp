#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "oracle.hpp"
#include "scratch_dir.hpp"
#include "tecno/data.hpp"

using namespace tecno;
using tecno::testing::random_tensor;
using tecno::testing::ScratchDir;

namespace {

std::vector<double> mfb(std::vector<std::uint64_t> counts) {
  return compute_mfb_weights(std::span<const std::uint64_t>(counts)).weights;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string le(std::uint64_t v, int bytes) {
  std::string s;
  for (int b = 0; b < bytes; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  return s;
}

std::string feature_header(std::uint64_t steps, std::uint32_t dim) {
  return std::string("TECNOFT1") + le(1, 4) + le(steps, 8) + le(dim, 4);
}

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.num_classes = 5;
  c.num_videos = 6;
  c.min_frames = 50;
  c.max_frames = 120;
  c.feature_dim = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("mfb weights on hand-computed examples") {
  CHECK(mfb({100, 50, 10}) == std::vector<double>{0.5, 1.0, 5.0});
  CHECK(mfb({10, 0, 10}) == std::vector<double>{1.0, 0.0, 1.0});
  CHECK(mfb({7, 7, 7, 7}) == std::vector<double>{1.0, 1.0, 1.0, 1.0});
  // Even count of present classes: median is the mean of the middle pair.
  const auto even = mfb({10, 20, 30, 40});
  CHECK(even[0] == doctest::Approx(2.5));
  CHECK(even[1] == doctest::Approx(1.25));
  CHECK(even[2] == doctest::Approx(0.25 / 0.3));
  CHECK(even[3] == doctest::Approx(0.625));
  CHECK_THROWS_AS(mfb({0, 0, 0}), DataError);
  CHECK_THROWS_AS(mfb({}), DataError);
}

TEST_CASE("mfb weights are invariant to count scaling and centred on the median") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = 1 + rng() % 9;
    std::vector<std::uint64_t> counts(classes);
    for (auto& c : counts) c = rng() % 5 == 0 ? 0 : 1 + rng() % 10000;
    if (std::all_of(counts.begin(), counts.end(), [](auto c) { return c == 0; })) counts[0] = 1;
    const std::uint64_t k = 1 + rng() % 1000;
    std::vector<std::uint64_t> scaled(counts);
    for (auto& c : scaled) c *= k;
    const auto w = mfb(counts);
    CHECK(w == mfb(scaled));
    bool positive = false;
    for (std::size_t c = 0; c < classes; ++c) {
      CHECK((counts[c] == 0) == (w[c] == 0.0));
      positive = positive || w[c] > 0.0;
    }
    CHECK(positive);
  }
  CHECK(mfb({30, 10, 20})[2] == 1.0);
}

TEST_CASE("count_labels") {
  VideoRecord a{"a", 1.0, FeatureSequence(1, 3), {0, 0, 2}, {"x", "y", "z"}};
  VideoRecord b{"b", 1.0, FeatureSequence(1, 2), {2, 1}, {"x", "y", "z"}};
  const std::vector<VideoRecord> records = {a, b};
  CHECK(count_labels(records, 3) == std::vector<std::uint64_t>{2, 1, 2});
  CHECK_THROWS_AS(count_labels(records, 2), LabelError);
}

TEST_CASE("feature file round-trips bit-exactly") {
  ScratchDir dir("feat");
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t dim = trial == 0 ? 1 : 1 + rng() % 20, steps = trial == 1 ? 1 : 1 + rng() % 50;
    auto f = random_tensor<float>(dim, steps, rng, 1e3);
    if (trial == 2) f(0, 0) = -0.0f;
    write_features(dir / "x.feat", f);
    const auto back = read_features(dir / "x.feat");
    REQUIRE(back.channels() == dim);
    REQUIRE(back.timesteps() == steps);
    CHECK(std::memcmp(back.values().data(), f.values().data(), f.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("feature file layout is time-major little-endian") {
  ScratchDir dir("layout");
  FeatureSequence f(2, 2, std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});  // channel 0: 1 2, channel 1: 3 4
  write_features(dir / "x.feat", f);
  std::ifstream in(dir / "x.feat", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 24 + 16);
  CHECK(bytes.substr(0, 24) == feature_header(2, 2));
  float values[4];
  std::memcpy(values, bytes.data() + 24, 16);
  CHECK(values[0] == 1.0f);
  CHECK(values[1] == 3.0f);
  CHECK(values[2] == 2.0f);
  CHECK(values[3] == 4.0f);
}

TEST_CASE("malformed feature files are rejected") {
  ScratchDir dir("badfeat");
  write_bytes(dir / "zero.feat", feature_header(0, 4));
  CHECK_THROWS_AS(read_features(dir / "zero.feat"), FormatError);
  write_bytes(dir / "nodim.feat", feature_header(3, 0));
  CHECK_THROWS_AS(read_features(dir / "nodim.feat"), FormatError);
  write_bytes(dir / "short.feat", feature_header(10, 4) + std::string(4 * 39, '\0'));
  CHECK_THROWS_AS(read_features(dir / "short.feat"), FormatError);
  write_bytes(dir / "huge.feat", feature_header(std::uint64_t{1} << 62, 1u << 31));
  CHECK_THROWS_AS(read_features(dir / "huge.feat"), FormatError);
  write_bytes(dir / "magic.feat", std::string("TECNOFT2") + le(1, 4) + le(1, 8) + le(1, 4) + le(0, 4));
  CHECK_THROWS_AS(read_features(dir / "magic.feat"), FormatError);
  write_bytes(dir / "version.feat", std::string("TECNOFT1") + le(2, 4) + le(1, 8) + le(1, 4) + le(0, 4));
  CHECK_THROWS_AS(read_features(dir / "version.feat"), FormatError);
  write_bytes(dir / "header.feat", std::string("TECNOFT1") + le(1, 4) + le(1, 3));
  CHECK_THROWS_AS(read_features(dir / "header.feat"), FormatError);
  CHECK_THROWS_AS(read_features(dir / "missing.feat"), FileError);
}

TEST_CASE("label and split files round-trip") {
  ScratchDir dir("labels");
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    LabelFile lf;
    lf.video_id = "v" + std::to_string(trial);
    lf.fps = 0.5 + static_cast<double>(rng() % 100) / 7.0;
    lf.num_classes = 1 + rng() % 7;
    for (std::size_t c = 0; c < lf.num_classes; ++c) lf.phase_names.push_back("phase " + std::to_string(c));
    lf.labels = tecno::testing::random_labels(trial == 0 ? 1 : 1 + rng() % 40, lf.num_classes, rng);
    write_labels(dir / "l.json", lf);
    CHECK(read_labels(dir / "l.json") == lf);

    DatasetSplit split;
    for (std::size_t n = 0; n < rng() % 4; ++n) split.train.push_back("t" + std::to_string(n));
    for (std::size_t n = 0; n < rng() % 4; ++n) split.validation.push_back("v" + std::to_string(n));
    for (std::size_t n = 0; n < rng() % 4; ++n) split.test.push_back("s" + std::to_string(n));
    write_split(dir / "s.json", split);
    CHECK(read_split(dir / "s.json") == split);
  }
}

TEST_CASE("malformed label and split files are rejected") {
  ScratchDir dir("badlabels");
  write_bytes(dir / "a.json", R"({"video_id":"a","fps":1,"num_classes":2,"phase_names":["x","y"],"labels":[0,2]})");
  CHECK_THROWS_AS(read_labels(dir / "a.json"), FormatError);
  write_bytes(dir / "b.json", R"({"video_id":"a","fps":1,"num_classes":2,"phase_names":["x"],"labels":[0]})");
  CHECK_THROWS_AS(read_labels(dir / "b.json"), FormatError);
  write_bytes(dir / "c.json", R"({"video_id":"a","fps":1,"num_classes":2,"phase_names":["x","y"]})");
  CHECK_THROWS_AS(read_labels(dir / "c.json"), FormatError);
  write_bytes(dir / "d.json", "{not json");
  CHECK_THROWS_AS(read_labels(dir / "d.json"), FormatError);
  write_bytes(dir / "e.json", R"({"train":["a"],"validation":["a"],"test":[]})");
  CHECK_THROWS_AS(read_split(dir / "e.json"), DataError);
}

TEST_CASE("record round-trip through a directory") {
  ScratchDir dir("record");
  const auto videos = synth_generate(small_synth(3));
  for (const auto& v : videos) write_record(dir.path(), v);
  for (const auto& v : videos) {
    const auto back = read_record(dir.path(), v.video_id);
    CHECK(back.video_id == v.video_id);
    CHECK(back.fps == v.fps);
    CHECK(back.features == v.features);
    CHECK(back.labels == v.labels);
    CHECK(back.phase_names == v.phase_names);
  }
  CHECK_THROWS_AS(read_record(dir.path(), "absent"), FileError);
}

TEST_CASE("split_dataset partitions deterministically") {
  std::vector<std::string> ids;
  for (int n = 0; n < 10; ++n) ids.push_back("video_" + std::to_string(n));
  const auto a = split_dataset(ids, {}, 7);
  CHECK(a.train.size() == 6);
  CHECK(a.validation.size() == 2);
  CHECK(a.test.size() == 2);
  CHECK_NOTHROW(a.validate_disjoint());
  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.validation.begin(), a.validation.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == 10);
  CHECK(split_dataset(ids, {}, 7) == a);
  CHECK_FALSE(split_dataset(ids, {}, 8) == a);

  const auto twelve = std::vector<std::string>(ids.begin(), ids.end());
  std::vector<std::string> more = twelve;
  more.push_back("video_10");
  more.push_back("video_11");
  const auto b = split_dataset(more, {8.0 / 12, 2.0 / 12, 2.0 / 12}, 0);
  CHECK(b.train.size() == 8);
  CHECK(b.validation.size() == 2);
  CHECK(b.test.size() == 2);

  // 7 videos at 0.6/0.2/0.2: 4.2/1.4/1.4 floor to 4/1/1, the spare video goes
  // to the largest fractional part, validation winning the tie with test.
  const auto c = split_dataset(std::span(ids).first(7), {}, 1);
  CHECK(c.train.size() == 4);
  CHECK(c.validation.size() == 2);
  CHECK(c.test.size() == 1);

  CHECK_THROWS_AS(split_dataset(ids, {1.0, 0.0, 0.0}, 0), ConfigError);
  CHECK(split_dataset(ids, {1.0, 0.0, 0.0}, 0, false).train.size() == 10);
  CHECK_THROWS_AS(split_dataset(ids, {0.5, 0.2, 0.2}, 0), ConfigError);
  CHECK_THROWS_AS(split_dataset(std::vector<std::string>{}, {}, 0), DataError);
}

TEST_CASE("validate_disjoint") {
  DatasetSplit s{{"a", "b"}, {"c"}, {"b"}};
  CHECK_THROWS_AS(s.validate_disjoint(), DataError);
}

TEST_CASE("synthetic generator: noiseless unblended phases equal their embeddings") {
  auto config = small_synth(11);
  config.noise_std = 0.0;
  config.transition_blend = 0;
  const auto videos = synth_generate(config);
  const auto embeddings = synth_embeddings(config);
  for (const auto& v : videos) {
    for (std::size_t t = 0; t < v.labels.size(); ++t)
      for (std::size_t d = 0; d < config.feature_dim; ++d)
        CHECK(v.features(d, t) == embeddings[static_cast<std::size_t>(v.labels[t])][d]);
  }
}

TEST_CASE("synthetic generator: embeddings are unit length and orthogonal when they fit") {
  auto config = small_synth(12);
  const auto e = synth_embeddings(config);
  REQUIRE(e.size() == 5);
  for (std::size_t a = 0; a < e.size(); ++a) {
    for (std::size_t b = 0; b < e.size(); ++b) {
      double d = 0.0;
      for (std::size_t k = 0; k < config.feature_dim; ++k) d += static_cast<double>(e[a][k]) * e[b][k];
      CHECK(d == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6).scale(1.0));
    }
  }
  config.num_classes = 12;
  const auto wide = synth_embeddings(config);
  for (const auto& v : wide) {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("synthetic generator: deterministic given the seed") {
  const auto a = synth_generate(small_synth(5));
  const auto b = synth_generate(small_synth(5));
  const auto c = synth_generate(small_synth(6));
  REQUIRE(a.size() == b.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    CHECK(a[n].features == b[n].features);
    CHECK(a[n].labels == b[n].labels);
  }
  CHECK_FALSE(a[0].features == c[0].features);
}

TEST_CASE("synthetic generator: ordered walks, durations and blending") {
  auto config = small_synth(8);
  config.num_videos = 20;
  for (const auto& v : synth_generate(config)) {
    CHECK_NOTHROW(v.validate());
    CHECK(v.labels.size() <= config.max_frames);
    CHECK(v.labels.size() + config.num_classes >= config.min_frames);
    CHECK(v.labels.front() == 0);
    CHECK(v.labels.back() == 4);
    for (std::size_t t = 1; t < v.labels.size(); ++t) {
      CHECK(v.labels[t] >= v.labels[t - 1]);
      CHECK(v.labels[t] - v.labels[t - 1] <= 1);
    }
    CHECK(v.phase_names.size() == 5);
    CHECK(v.video_id.rfind("video_", 0) == 0);
  }

  config.skip_prob = 0.4;
  std::size_t skipped = 0;
  for (const auto& v : synth_generate(config)) {
    CHECK_NOTHROW(v.validate());
    for (std::size_t t = 1; t < v.labels.size(); ++t) CHECK(v.labels[t] >= v.labels[t - 1]);
    std::set<std::int32_t> visited(v.labels.begin(), v.labels.end());
    if (visited.size() < 5) ++skipped;
  }
  CHECK(skipped > 0);

  // Blended frames lie on the segment between the two embeddings.
  config.skip_prob = 0.0;
  config.noise_std = 0.0;
  config.transition_blend = 6;
  const auto e = synth_embeddings(config);
  for (const auto& v : synth_generate(config)) {
    for (std::size_t t = 0; t < v.labels.size(); ++t) {
      const auto& own = e[static_cast<std::size_t>(v.labels[t])];
      double off = 0.0;
      for (std::size_t d = 0; d < 8; ++d) off = std::max(off, std::abs(static_cast<double>(v.features(d, t)) - own[d]));
      bool near_boundary = false;
      for (std::size_t u = (t >= 3 ? t - 3 : 0); u + 1 < std::min(v.labels.size(), t + 4); ++u)
        near_boundary = near_boundary || v.labels[u] != v.labels[u + 1];
      if (!near_boundary) CHECK(off == 0.0);
    }
  }
}

TEST_CASE("synthetic generator: phase shares are 1/C within 3 sigma") {
  auto config = small_synth(21);
  config.num_videos = 150;
  config.num_classes = 4;
  config.min_frames = 80;
  config.max_frames = 240;
  const auto videos = synth_generate(config);
  const std::size_t classes = config.num_classes;
  std::vector<std::vector<double>> per_video(classes);
  std::vector<double> totals;
  double grand = 0.0;
  for (const auto& v : videos) {
    std::vector<double> counts(classes, 0.0);
    for (auto y : v.labels) counts[static_cast<std::size_t>(y)] += 1.0;
    for (std::size_t c = 0; c < classes; ++c) per_video[c].push_back(counts[c]);
    totals.push_back(static_cast<double>(v.labels.size()));
    grand += static_cast<double>(v.labels.size());
  }
  const double n = static_cast<double>(videos.size());
  for (std::size_t c = 0; c < classes; ++c) {
    double frames = 0.0;
    for (double x : per_video[c]) frames += x;
    const double share = frames / grand;
    // Ratio-estimator standard error over videos.
    double ss = 0.0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
      const double r = per_video[c][v] - share * totals[v];
      ss += r * r;
    }
    const double sigma = std::sqrt(ss / (n - 1.0)) * std::sqrt(n) / grand;
    CHECK(std::abs(share - 1.0 / static_cast<double>(classes)) <= 3.0 * sigma);
  }
}

TEST_CASE("synthetic config validation") {
  auto bad = small_synth(0);
  bad.min_frames = 500;
  CHECK_THROWS_AS(synth_generate(bad), ConfigError);
  bad = small_synth(0);
  bad.skip_prob = 1.0;
  CHECK_THROWS_AS(synth_generate(bad), ConfigError);
  bad = small_synth(0);
  bad.noise_std = -1.0;
  CHECK_THROWS_AS(synth_generate(bad), ConfigError);
  bad = small_synth(0);
  bad.num_classes = 1;
  CHECK_THROWS_AS(synth_generate(bad), ConfigError);
}
