#include "ctseg/nets.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

void GeneratorConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("generator: stages must be >= 1");
  if (base_channels < 1 || max_channels < base_channels)
    throw std::invalid_argument("generator: bad channel config");
  if (kernel != 3) throw std::invalid_argument("generator: kernel must be 3");
  if (in_channels < 1 || out_channels < 1)
    throw std::invalid_argument("generator: channels must be >= 1");
  if (input_side != (1 << stages))
    throw std::invalid_argument("generator: input_side must equal 2^stages");
}

std::vector<int> GeneratorConfig::stage_channels() const {
  std::vector<int> ch(stages);
  for (int s = 0; s < stages; ++s) {
    const int64_t c = static_cast<int64_t>(base_channels) << s;
    ch[s] = static_cast<int>(std::min<int64_t>(c, max_channels));
  }
  return ch;
}

void DiscriminatorConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("discriminator: layers must be >= 1");
  if (static_cast<int>(strides.size()) != layers ||
      static_cast<int>(channels.size()) != layers)
    throw std::invalid_argument("discriminator: strides/channels must have one entry per layer");
  if (kernel < 1 || padding < 0) throw std::invalid_argument("discriminator: bad kernel/padding");
  for (int s : strides)
    if (s < 1) throw std::invalid_argument("discriminator: strides must be >= 1");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("discriminator: channels must be >= 1");
  if (channels.back() != 1)
    throw std::invalid_argument("discriminator: final layer must have 1 channel");
}

DiscriminatorConfig DiscriminatorConfig::with_base_channels(int base) {
  DiscriminatorConfig cfg;
  cfg.channels = {base, 2 * base, 4 * base, 8 * base, 1};
  return cfg;
}

int receptive_field(const DiscriminatorConfig& cfg) {
  cfg.validate();
  int rf = 1, jump = 1;
  for (int i = 0; i < cfg.layers; ++i) {
    rf += (cfg.kernel - 1) * jump;
    jump *= cfg.strides[i];
  }
  return rf;
}

int discriminator_output_side(const DiscriminatorConfig& cfg, int input_side) {
  cfg.validate();
  int side = input_side;
  for (int i = 0; i < cfg.layers; ++i) {
    side = (side + 2 * cfg.padding - cfg.kernel) / cfg.strides[i] + 1;
    if (side < 1) throw std::invalid_argument("discriminator: input too small");
  }
  return side;
}

void save_params_file(const std::string& path, const std::vector<NamedParam<float>>& params,
                      const std::string& config_kind, const std::string& config_json) {
  json manifest;
  manifest["format"] = "ctseg-params-v1";
  manifest["config_kind"] = config_kind;
  manifest["config"] = json::parse(config_json);
  manifest["data_file"] = fs::path(path).filename().string() + ".bin";
  json tensors = json::array();
  size_t total = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    total += p.tensor.size();
  }
  manifest["tensors"] = std::move(tensors);

  std::ofstream hf(path);
  if (!hf) throw std::runtime_error("cannot open for write: " + path);
  hf << manifest.dump(2) << "\n";

  std::ofstream bf(path + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open for write: " + path + ".bin");
  for (const auto& p : params)
    bf.write(reinterpret_cast<const char*>(p.tensor.data().data()),
             static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
  if (!bf) throw std::runtime_error("write failed: " + path + ".bin");
  (void)total;
}

std::string load_params_file(const std::string& path, std::vector<NamedParam<float>> params,
                             const std::string& config_kind) {
  std::ifstream hf(path);
  if (!hf) throw std::runtime_error("cannot open: " + path);
  json manifest;
  try {
    hf >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + path + ": " + e.what());
  }
  if (manifest.value("format", "") != "ctseg-params-v1")
    throw std::runtime_error(path + ": unknown params format");
  if (manifest.value("config_kind", "") != config_kind)
    throw std::runtime_error(path + ": expected " + config_kind + " checkpoint");

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error(path + ": tensor count mismatch (checkpoint " +
                             std::to_string(tensors.size()) + ", network " +
                             std::to_string(params.size()) + ")");
  size_t total = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != params[i].name)
      throw std::runtime_error(path + ": tensor name mismatch at index " + std::to_string(i));
    if (t.at("shape").get<std::vector<int>>() != params[i].tensor.shape())
      throw std::runtime_error(path + ": shape mismatch for " + params[i].name);
    total += params[i].tensor.size();
  }

  const std::string bin =
      (fs::path(path).parent_path() / manifest.at("data_file").get<std::string>()).string();
  std::ifstream bf(bin, std::ios::binary | std::ios::ate);
  if (!bf) throw std::runtime_error("cannot open: " + bin);
  if (static_cast<size_t>(bf.tellg()) != total * sizeof(float))
    throw std::runtime_error(bin + ": payload size mismatch");
  bf.seekg(0);
  for (auto& p : params) {
    bf.read(reinterpret_cast<char*>(p.tensor.data().data()),
            static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
  }
  if (!bf) throw std::runtime_error("read failed: " + bin);
  return manifest.at("config").dump();
}

std::string generator_config_json(const GeneratorConfig& c) {
  return json{{"stages", c.stages},
              {"base_channels", c.base_channels},
              {"max_channels", c.max_channels},
              {"kernel", c.kernel},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"input_side", c.input_side}}
      .dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  GeneratorConfig c;
  c.stages = j.at("stages").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.max_channels = j.at("max_channels").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.input_side = j.at("input_side").get<int>();
  c.validate();
  return c;
}

std::string discriminator_config_json(const DiscriminatorConfig& c) {
  return json{{"layers", c.layers},
              {"kernel", c.kernel},
              {"strides", c.strides},
              {"channels", c.channels},
              {"leaky_slope", c.leaky_slope},
              {"padding", c.padding}}
      .dump();
}

DiscriminatorConfig discriminator_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  DiscriminatorConfig c;
  c.layers = j.at("layers").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.strides = j.at("strides").get<std::vector<int>>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.padding = j.at("padding").get<int>();
  c.validate();
  return c;
}

}  // namespace ctseg
