#include <cstring>
#include <fstream>

#include "config_json.hpp"
#include "hf/trainer.hpp"

namespace hf {

using nlohmann::json;

// Checkpoint layout: 8-byte magic (format + version), u64 header length,
// JSON header, then raw little-endian doubles for every parameter block in
// header order, followed by Adam first/second moments when present.
namespace {

constexpr char kMagic[8] = {'H', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_doubles(std::ofstream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double)) {
    throw IoError("checkpoint " + path + ": truncated parameter data");
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg,
                     std::size_t epoch, std::optional<double> val_fm, const Adam* adam,
                     const Rng* rng) {
  json header;
  header["config"] = detail::train_config_to_json(cfg);
  header["sensor_channels"] = model.config().sensor_channels;
  header["num_classes"] = model.config().num_classes;
  header["epoch"] = epoch;
  if (val_fm) {
    header["val_fm"] = *val_fm;
  } else {
    header["val_fm"] = nullptr;
  }
  if (rng) {
    header["rng"] = rng->state();
  } else {
    header["rng"] = nullptr;
  }
  header["adam"] = {{"present", adam != nullptr},
                    {"step", adam ? adam->step_count() : 0}};
  json blocks = json::array();
  for (const ParamBlock& b : model.blocks()) {
    blocks.push_back({{"name", b.name}, {"shape", b.tensor.shape()}});
  }
  header["blocks"] = std::move(blocks);

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const ParamBlock& b : model.blocks()) {
    write_doubles(out, b.tensor.data(), b.tensor.numel());
  }
  if (adam) {
    for (std::size_t i = 0; i < model.blocks().size(); ++i) {
      write_doubles(out, adam->first_moments()[i].data(), adam->first_moments()[i].size());
    }
    for (std::size_t i = 0; i < model.blocks().size(); ++i) {
      write_doubles(out, adam->second_moments()[i].data(),
                    adam->second_moments()[i].size());
    }
  }
  if (!out) throw IoError("write failed for checkpoint " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(magic) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("checkpoint " + path + ": bad magic or unsupported version");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(hlen)) {
    throw IoError("checkpoint " + path + ": truncated header length");
  }
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<std::uint64_t>(in.gcount()) != hlen) {
    throw IoError("checkpoint " + path + ": truncated header");
  }
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }

  TrainConfig cfg =
      detail::train_config_from_json(header.at("config"), "checkpoint " + path);
  const std::size_t D = header.at("sensor_channels").get<std::size_t>();
  const std::size_t C = header.at("num_classes").get<std::size_t>();

  Model model(model_config_from(cfg, D, C), cfg.seed);

  const json& blocks = header.at("blocks");
  if (blocks.size() != model.blocks().size()) {
    throw ConfigError("checkpoint " + path + ": holds " + std::to_string(blocks.size()) +
                      " parameter blocks, model expects " +
                      std::to_string(model.blocks().size()));
  }
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    const ParamBlock& b = model.blocks()[i];
    if (blocks[i].at("name").get<std::string>() != b.name ||
        blocks[i].at("shape").get<Shape>() != b.tensor.shape()) {
      throw ConfigError("checkpoint " + path + ": block '" +
                        blocks[i].at("name").get<std::string>() +
                        "' does not match model block '" + b.name + "'");
    }
  }
  for (const ParamBlock& b : model.blocks()) {
    read_doubles(in, b.tensor.data(), b.tensor.numel(), path);
  }

  LoadedCheckpoint loaded{std::move(cfg), D, C,
                          header.at("epoch").get<std::size_t>(),
                          std::nullopt,
                          std::move(model),
                          std::nullopt,
                          std::nullopt};
  if (!header.at("val_fm").is_null()) {
    loaded.val_fm = header.at("val_fm").get<double>();
  }
  if (header.at("adam").at("present").get<bool>()) {
    Adam adam(loaded.model.blocks(), loaded.config.adam_beta1, loaded.config.adam_beta2,
              loaded.config.adam_eps);
    std::vector<std::vector<double>> m, v;
    for (const ParamBlock& b : loaded.model.blocks()) {
      m.emplace_back(b.tensor.numel());
      read_doubles(in, m.back().data(), m.back().size(), path);
    }
    for (const ParamBlock& b : loaded.model.blocks()) {
      v.emplace_back(b.tensor.numel());
      read_doubles(in, v.back().data(), v.back().size(), path);
    }
    adam.restore(header.at("adam").at("step").get<std::size_t>(), std::move(m),
                 std::move(v));
    loaded.adam = std::move(adam);
  }
  if (!header.at("rng").is_null()) {
    Rng rng(0);
    rng.set_state(header.at("rng").get<std::string>());
    loaded.rng = rng;
  }
  return loaded;
}

}  // namespace hf
