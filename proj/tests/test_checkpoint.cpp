#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracle.hpp"
#include "scratch_dir.hpp"
#include "tecno/checkpoint.hpp"

using namespace tecno;
using tecno::testing::random_params;
using tecno::testing::ScratchDir;

namespace {

ArchConfig arch_of(std::size_t in, std::size_t classes, std::size_t layers, std::size_t stages, std::size_t hidden) {
  ArchConfig a;
  a.input_dim = in;
  a.num_classes = classes;
  a.num_layers = layers;
  a.num_stages = stages;
  a.hidden_dim = hidden;
  return a;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_bits(const ModelParams<float>& a, const ModelParams<float>& b) {
  const auto fa = flatten(a), fb = flatten(b);
  return fa.size() == fb.size() && std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
  ScratchDir dir("ckpt");
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto arch = arch_of(1 + rng() % 5, 2 + rng() % 4, 1 + rng() % 4, 1 + rng() % 3, 1 + rng() % 6);
    Checkpoint ck;
    ck.params = random_params<float>(arch, rng, 3.0);
    ck.seed = rng();
    ck.training = {{"epochs", trial}, {"note", "x"}};
    write_checkpoint(dir / "m.ckpt", ck);
    const auto back = read_checkpoint(dir / "m.ckpt");
    CHECK(back.params.config == arch);
    CHECK(same_bits(back.params, ck.params));
    CHECK(back.seed == ck.seed);
    CHECK(back.training == ck.training);
    write_checkpoint(dir / "again.ckpt", back);
    CHECK(slurp(dir / "again.ckpt") == slurp(dir / "m.ckpt"));
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  ScratchDir dir("badckpt");
  std::mt19937_64 rng(2);
  Checkpoint ck;
  ck.params = random_params<float>(arch_of(3, 2, 2, 2, 4), rng);
  write_checkpoint(dir / "good.ckpt", ck);
  const auto bytes = slurp(dir / "good.ckpt");

  auto magic = bytes;
  magic[0] = 'X';
  spit(dir / "magic.ckpt", magic);
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.ckpt"), FormatError);

  auto version = bytes;
  version[10] = 9;
  spit(dir / "version.ckpt", version);
  CHECK_THROWS_AS(read_checkpoint(dir / "version.ckpt"), FormatError);

  spit(dir / "short.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(dir / "short.ckpt"), FormatError);
  spit(dir / "header.ckpt", bytes.substr(0, 20));
  CHECK_THROWS_AS(read_checkpoint(dir / "header.ckpt"), FormatError);
  spit(dir / "long.ckpt", bytes + "junk");
  CHECK_THROWS_AS(read_checkpoint(dir / "long.ckpt"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.ckpt"), FileError);
}

TEST_CASE("arch json") {
  const auto arch = arch_of(16, 5, 6, 2, 32);
  CHECK(arch_from_json(arch_to_json(arch)) == arch);
  CHECK_THROWS_AS(arch_from_json({{"hidden", 3}}), ConfigError);
  CHECK_THROWS_AS(arch_from_json({{"kernel_size", 5}}), ConfigError);
  CHECK(arch_from_json({{"kernel_size", 3}}).num_layers == ArchConfig{}.num_layers);
  ArchConfig defaults;
  defaults.hidden_dim = 8;
  CHECK(arch_from_json({{"num_stages", 3}}, defaults).hidden_dim == 8);
}
