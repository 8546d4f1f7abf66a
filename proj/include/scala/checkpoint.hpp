#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "scala/corpus.hpp"
#include "scala/model.hpp"
#include "scala/tensor.hpp"

namespace scala {

inline constexpr char kCheckpointMagic[4] = {'S', 'C', 'L', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Checkpoint container: "SCLC" | u32 version | u32 config_len | config text
// (key=value lines) | u32 n_tensors | tensor blobs. Each blob is
// u32 name_len | name | u32 ndim | u32 dims... | f64 values, little-endian.
// Values round-trip bit-exactly.
struct Checkpoint {
  std::map<std::string, std::string> config;
  std::map<std::string, Tensor> tensors;

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check_data(out.good(), "cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    io::write_u32(out, kCheckpointVersion);
    std::string cfg_text;
    for (const auto& [k, v] : config) cfg_text += k + "=" + v + "\n";
    io::write_u32(out, static_cast<uint32_t>(cfg_text.size()));
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    io::write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      io::write_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      io::write_u32(out, static_cast<uint32_t>(t.shape().size()));
      for (int d : t.shape()) io::write_u32(out, static_cast<uint32_t>(d));
      for (double v : t.data()) io::write_f64(out, v);
    }
    check_data(out.good(), "failed while writing checkpoint: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_data(in.good(), "cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    check_data(in.good() && std::memcmp(magic, kCheckpointMagic, 4) == 0,
               path + ": not a checkpoint file");
    uint32_t version = io::read_u32(in);
    check_data(version == kCheckpointVersion,
               path + ": unsupported checkpoint version " +
                   std::to_string(version));
    uint32_t cfg_len = io::read_u32(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    check_data(in.good(), path + ": truncated config block");

    Checkpoint ckpt;
    std::istringstream cfg_stream(cfg_text);
    std::string line;
    while (std::getline(cfg_stream, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      check_data(eq != std::string::npos, path + ": bad config line " + line);
      ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
    }

    uint32_t n_tensors = io::read_u32(in);
    for (uint32_t i = 0; i < n_tensors; ++i) {
      uint32_t name_len = io::read_u32(in);
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      uint32_t ndim = io::read_u32(in);
      std::vector<int> shape;
      int numel = 1;
      for (uint32_t d = 0; d < ndim; ++d) {
        shape.push_back(static_cast<int>(io::read_u32(in)));
        numel *= shape.back();
      }
      std::vector<double> data(static_cast<size_t>(numel));
      for (double& v : data) v = io::read_f64(in);
      check_data(in.good(), path + ": truncated tensor " + name);
      ckpt.tensors.emplace(name,
                           Tensor::from_values(std::move(shape), std::move(data)));
    }
    return ckpt;
  }
};

inline void save_model(const std::string& path, const ModelConfig& cfg,
                       const ParamStore& params) {
  Checkpoint ckpt;
  ckpt.config = cfg.to_kv();
  for (const auto& [name, t] : params.items())
    ckpt.tensors.emplace("param/" + name, t.detach());
  ckpt.save(path);
}

struct LoadedModel {
  ModelConfig config;
  ParamStore params;
};

inline LoadedModel from_checkpoint(const Checkpoint& ckpt,
                                   const std::string& context) {
  LoadedModel model;
  model.config = ModelConfig::from_kv(ckpt.config);
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("param/", 0) == 0)
      model.params.add(name.substr(6), t.detach());
  }
  // structural check: a freshly initialized store must agree name-by-name
  ParamStore reference = init_model(model.config, 0);
  for (const auto& [name, t] : reference.items()) {
    check_data(model.params.has(name), context + ": missing parameter " + name);
    check_data(model.params.get(name).shape() == t.shape(),
               context + ": parameter shape mismatch for " + name);
  }
  check_data(model.params.items().size() == reference.items().size(),
             context + ": unexpected extra parameters");
  return model;
}

inline LoadedModel load_model(const std::string& path) {
  return from_checkpoint(Checkpoint::load(path), path);
}

}  // namespace scala
