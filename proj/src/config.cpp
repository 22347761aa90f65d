#include "ctseg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace ctseg {

RunConfig::RunConfig() {
  train.stop_epoch = 85;  // paper-scale default; phantom configs unset it
}

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void RunConfig::validate() const {
  if (!(imgvol.window_lo < imgvol.window_hi))
    throw std::invalid_argument("config: window_lo must be < window_hi");
  if (!(imgvol.resample_mm > 0)) throw std::invalid_argument("config: resample_mm must be > 0");
  if (imgvol.crop_side < 1) throw std::invalid_argument("config: crop_side must be >= 1");
  generator.validate();
  discriminator.validate();
  train.validate();
  weights.validate();
  postproc.validate();
  for (int s : metrics.region_splits)
    if (s < 1) throw std::invalid_argument("config: region_splits must be >= 1");
  if (metrics.min_voxels < 1) throw std::invalid_argument("config: min_voxels must be >= 1");
  phantom.validate();
  if (phantom_dataset.train_healthy < 1 || phantom_dataset.train_infected < 1 ||
      phantom_dataset.test < 1)
    throw std::invalid_argument("config: phantom dataset counts must be >= 1");
}

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["imgvol"] = {{"window_lo", imgvol.window_lo},
                 {"window_hi", imgvol.window_hi},
                 {"resample_mm", imgvol.resample_mm},
                 {"crop_side", imgvol.crop_side}};
  j["generator"] = json::parse(generator_config_json(generator));
  j["discriminator"] = json::parse(discriminator_config_json(discriminator));
  json t{{"epochs", train.epochs},
         {"lr0", train.lr0},
         {"decay_start_epoch", train.decay_start_epoch},
         {"batch_size", train.batch_size},
         {"adam_beta1", train.adam_beta1},
         {"adam_beta2", train.adam_beta2},
         {"adam_eps", train.adam_eps},
         {"crop_side", train.crop_side},
         {"init_std", train.init_std},
         {"fake_buffer", train.fake_buffer},
         {"checkpoint_keep", train.checkpoint_keep},
         {"lambda_cycle", weights.lambda_cycle},
         {"lambda_identity", weights.lambda_identity}};
  if (train.stop_epoch) t["stop_epoch"] = *train.stop_epoch;
  j["cyclegan"] = std::move(t);
  j["postproc"] = {{"method", to_string(postproc.method)},
                   {"median_window", postproc.median_window},
                   {"gaussian_sigma", postproc.gaussian_sigma},
                   {"k", postproc.k},
                   {"restarts", postproc.restarts}};
  j["metrics"] = {{"region_splits", metrics.region_splits},
                  {"min_voxels", metrics.min_voxels}};
  j["phantom"] = {{"size", phantom.size},
                  {"lung_hu", {phantom.lung_hu_lo, phantom.lung_hu_hi}},
                  {"body_hu", {phantom.body_hu_lo, phantom.body_hu_hi}},
                  {"vessels_per_lung", phantom.vessels_per_lung},
                  {"vessel_hu", phantom.vessel_hu},
                  {"lesion_count", {phantom.lesion_count_min, phantom.lesion_count_max}},
                  {"lesion_hu", {phantom.lesion_hu_lo, phantom.lesion_hu_hi}},
                  {"lesion_radius", {phantom.lesion_radius_min, phantom.lesion_radius_max}},
                  {"noise_hu", phantom.noise_hu},
                  {"train_healthy", phantom_dataset.train_healthy},
                  {"train_infected", phantom_dataset.train_infected},
                  {"test", phantom_dataset.test}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  require_keys(j, "top level",
               {"seed", "imgvol", "generator", "discriminator", "cyclegan", "postproc",
                "metrics", "phantom"});

  RunConfig c;
  maybe(j, "seed", c.seed);

  if (j.contains("imgvol")) {
    const auto& s = j.at("imgvol");
    require_keys(s, "imgvol", {"window_lo", "window_hi", "resample_mm", "crop_side"});
    maybe(s, "window_lo", c.imgvol.window_lo);
    maybe(s, "window_hi", c.imgvol.window_hi);
    maybe(s, "resample_mm", c.imgvol.resample_mm);
    maybe(s, "crop_side", c.imgvol.crop_side);
  }
  if (j.contains("generator")) {
    const auto& s = j.at("generator");
    require_keys(s, "generator",
                 {"stages", "base_channels", "max_channels", "kernel", "in_channels",
                  "out_channels", "input_side"});
    maybe(s, "stages", c.generator.stages);
    maybe(s, "base_channels", c.generator.base_channels);
    maybe(s, "max_channels", c.generator.max_channels);
    maybe(s, "kernel", c.generator.kernel);
    maybe(s, "in_channels", c.generator.in_channels);
    maybe(s, "out_channels", c.generator.out_channels);
    maybe(s, "input_side", c.generator.input_side);
  }
  if (j.contains("discriminator")) {
    const auto& s = j.at("discriminator");
    require_keys(s, "discriminator",
                 {"layers", "kernel", "strides", "channels", "leaky_slope", "padding",
                  "base_channels"});
    if (s.contains("base_channels"))
      c.discriminator = DiscriminatorConfig::with_base_channels(s.at("base_channels").get<int>());
    maybe(s, "layers", c.discriminator.layers);
    maybe(s, "kernel", c.discriminator.kernel);
    maybe(s, "strides", c.discriminator.strides);
    maybe(s, "channels", c.discriminator.channels);
    maybe(s, "leaky_slope", c.discriminator.leaky_slope);
    maybe(s, "padding", c.discriminator.padding);
  }
  if (j.contains("cyclegan")) {
    const auto& s = j.at("cyclegan");
    require_keys(s, "cyclegan",
                 {"epochs", "lr0", "decay_start_epoch", "batch_size", "adam_beta1",
                  "adam_beta2", "adam_eps", "stop_epoch", "crop_side", "init_std",
                  "fake_buffer", "checkpoint_keep", "lambda_cycle", "lambda_identity"});
    maybe(s, "epochs", c.train.epochs);
    maybe(s, "lr0", c.train.lr0);
    maybe(s, "decay_start_epoch", c.train.decay_start_epoch);
    maybe(s, "batch_size", c.train.batch_size);
    maybe(s, "adam_beta1", c.train.adam_beta1);
    maybe(s, "adam_beta2", c.train.adam_beta2);
    maybe(s, "adam_eps", c.train.adam_eps);
    maybe(s, "crop_side", c.train.crop_side);
    maybe(s, "init_std", c.train.init_std);
    maybe(s, "fake_buffer", c.train.fake_buffer);
    maybe(s, "checkpoint_keep", c.train.checkpoint_keep);
    maybe(s, "lambda_cycle", c.weights.lambda_cycle);
    maybe(s, "lambda_identity", c.weights.lambda_identity);
    if (s.contains("stop_epoch")) {
      if (s.at("stop_epoch").is_null()) c.train.stop_epoch.reset();
      else c.train.stop_epoch = s.at("stop_epoch").get<int>();
    }
  }
  if (j.contains("postproc")) {
    const auto& s = j.at("postproc");
    require_keys(s, "postproc", {"method", "median_window", "gaussian_sigma", "k", "restarts"});
    if (s.contains("method"))
      c.postproc.method = binarize_method_from_string(s.at("method").get<std::string>());
    maybe(s, "median_window", c.postproc.median_window);
    maybe(s, "gaussian_sigma", c.postproc.gaussian_sigma);
    maybe(s, "k", c.postproc.k);
    maybe(s, "restarts", c.postproc.restarts);
  }
  if (j.contains("metrics")) {
    const auto& s = j.at("metrics");
    require_keys(s, "metrics", {"region_splits", "min_voxels"});
    maybe(s, "region_splits", c.metrics.region_splits);
    maybe(s, "min_voxels", c.metrics.min_voxels);
  }
  if (j.contains("phantom")) {
    const auto& s = j.at("phantom");
    require_keys(s, "phantom",
                 {"size", "lung_hu", "body_hu", "vessels_per_lung", "vessel_hu",
                  "lesion_count", "lesion_hu", "lesion_radius", "noise_hu",
                  "train_healthy", "train_infected", "test"});
    maybe(s, "size", c.phantom.size);
    if (s.contains("lung_hu")) {
      c.phantom.lung_hu_lo = s.at("lung_hu").at(0).get<double>();
      c.phantom.lung_hu_hi = s.at("lung_hu").at(1).get<double>();
    }
    if (s.contains("body_hu")) {
      c.phantom.body_hu_lo = s.at("body_hu").at(0).get<double>();
      c.phantom.body_hu_hi = s.at("body_hu").at(1).get<double>();
    }
    maybe(s, "vessels_per_lung", c.phantom.vessels_per_lung);
    maybe(s, "vessel_hu", c.phantom.vessel_hu);
    if (s.contains("lesion_count")) {
      c.phantom.lesion_count_min = s.at("lesion_count").at(0).get<int>();
      c.phantom.lesion_count_max = s.at("lesion_count").at(1).get<int>();
    }
    if (s.contains("lesion_hu")) {
      c.phantom.lesion_hu_lo = s.at("lesion_hu").at(0).get<double>();
      c.phantom.lesion_hu_hi = s.at("lesion_hu").at(1).get<double>();
    }
    if (s.contains("lesion_radius")) {
      c.phantom.lesion_radius_min = s.at("lesion_radius").at(0).get<double>();
      c.phantom.lesion_radius_max = s.at("lesion_radius").at(1).get<double>();
    }
    maybe(s, "noise_hu", c.phantom.noise_hu);
    maybe(s, "train_healthy", c.phantom_dataset.train_healthy);
    maybe(s, "train_infected", c.phantom_dataset.train_infected);
    maybe(s, "test", c.phantom_dataset.test);
  }

  // seeds fan out to the sections that consume them
  c.train.seed = c.seed;
  c.phantom.seed = c.seed;
  c.postproc.seed = c.seed;

  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json(text);
}

}  // namespace ctseg
