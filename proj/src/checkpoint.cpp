#include "tecno/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>

#include "binary_io.hpp"

namespace tecno {

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

std::size_t get_size(const nlohmann::json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("arch.") + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

nlohmann::json arch_to_json(const ArchConfig& config) {
  return {{"input_dim", config.input_dim},   {"hidden_dim", config.hidden_dim},
          {"num_layers", config.num_layers}, {"num_stages", config.num_stages},
          {"num_classes", config.num_classes}, {"kernel_size", ArchConfig::kernel_size}};
}

ArchConfig arch_from_json(const nlohmann::json& j, ArchConfig defaults) {
  if (!j.is_object()) throw ConfigError("arch must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "input_dim" && key != "hidden_dim" && key != "num_layers" && key != "num_stages" &&
        key != "num_classes" && key != "kernel_size") {
      throw ConfigError("unknown field arch." + key);
    }
  }
  if (j.contains("kernel_size") && j.at("kernel_size") != ArchConfig::kernel_size) {
    throw ConfigError("arch.kernel_size is fixed at 3");
  }
  ArchConfig config = defaults;
  config.input_dim = get_size(j, "input_dim", defaults.input_dim);
  config.hidden_dim = get_size(j, "hidden_dim", defaults.hidden_dim);
  config.num_layers = get_size(j, "num_layers", defaults.num_layers);
  config.num_stages = get_size(j, "num_stages", defaults.num_stages);
  config.num_classes = get_size(j, "num_classes", defaults.num_classes);
  return config;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open checkpoint for writing: " + path.string());

  const nlohmann::json header = {
      {"arch", arch_to_json(checkpoint.params.config)},
      {"seed", checkpoint.seed},
      {"training", checkpoint.training},
  };
  const std::string text = header.dump();
  out.write(kCheckpointMagic, kMagicSize);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::put_le<std::uint64_t>(out, checkpoint.params.parameter_count());
  for_each_array(checkpoint.params, [&](const std::vector<float>& a) {
    for (float v : a) detail::put_f32(out, v);
  });
  if (!out) throw FileError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint: " + path.string());
  const std::string where = " in checkpoint " + path.string();

  char magic[kMagicSize];
  if (!in.read(magic, kMagicSize) || std::memcmp(magic, kCheckpointMagic, kMagicSize) != 0) {
    throw FormatError("bad magic" + where);
  }
  std::uint32_t version = 0;
  if (!detail::get_le(in, version)) throw FormatError("truncated version" + where);
  if (version != kCheckpointVersion) throw FormatError("unsupported version " + std::to_string(version) + where);

  std::uint64_t header_size = 0;
  if (!detail::get_le(in, header_size)) throw FormatError("truncated header length" + where);
  if (header_size > (std::uint64_t{1} << 30)) throw FormatError("header length too large" + where);
  std::string text(header_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_size))) {
    throw FormatError("truncated header" + where);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON header" + where + ": " + e.what());
  }
  if (!header.is_object() || !header.contains("arch")) throw FormatError("header lacks arch" + where);

  Checkpoint checkpoint;
  try {
    checkpoint.params = zero_params<float>(arch_from_json(header.at("arch")));
  } catch (const ConfigError& e) {
    throw FormatError(std::string(e.what()) + where);
  }
  checkpoint.seed = header.value("seed", std::uint64_t{0});
  checkpoint.training = header.value("training", nlohmann::json::object());

  std::uint64_t count = 0;
  if (!detail::get_le(in, count)) throw FormatError("truncated parameter count" + where);
  if (count != checkpoint.params.parameter_count()) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match arch (" +
                      std::to_string(checkpoint.params.parameter_count()) + ")" + where);
  }
  for_each_array(checkpoint.params, [&](std::vector<float>& a) {
    for (float& v : a) {
      if (!detail::get_f32(in, v)) throw FormatError("truncated parameter payload" + where);
    }
  });
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after parameters" + where);
  return checkpoint;
}

}  // namespace tecno
