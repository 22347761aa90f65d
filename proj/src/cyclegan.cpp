#include "ctseg/cyclegan.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "ctseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

ad::Tensor<float> slice_to_tensor(const SliceImage& s) {
  return ad::Tensor<float>::from_data({1, 1, s.height, s.width}, s.data);
}

SliceImage tensor_to_slice(const ad::Tensor<float>& t, const SliceImage& like) {
  if (t.shape().size() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
    throw std::invalid_argument("tensor_to_slice: expected [1,1,H,W]");
  SliceImage out = like;
  out.height = t.dim(2);
  out.width = t.dim(3);
  out.data = t.data();
  return out;
}

SliceImage synthesize_healthy(const Generator<float>& g_xy, const SliceImage& infected) {
  ad::NoGradGuard ng;
  ad::Tensor<float> out = g_xy.forward(slice_to_tensor(infected));
  SliceImage s = tensor_to_slice(out, infected);
  s.label = SliceLabel::unknown;
  return s;
}

namespace {

void set_requires_grad(std::vector<NamedParam<float>>& params, bool b) {
  for (auto& p : params) p.tensor.set_requires_grad(b);
}

void zero_grads(std::vector<NamedParam<float>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::string train_config_json(const TrainConfig& c, const LossWeights& w) {
  json j{{"epochs", c.epochs},
         {"lr0", c.lr0},
         {"decay_start_epoch", c.decay_start_epoch},
         {"batch_size", c.batch_size},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},
         {"adam_eps", c.adam_eps},
         {"crop_side", c.crop_side},
         {"seed", c.seed},
         {"init_std", c.init_std},
         {"fake_buffer", c.fake_buffer},
         {"lambda_cycle", w.lambda_cycle},
         {"lambda_identity", w.lambda_identity}};
  if (c.stop_epoch) j["stop_epoch"] = *c.stop_epoch;
  return j.dump();
}

void save_adam(const std::string& path, const AdamState<float>& s) {
  size_t total = 0;
  for (const auto& m : s.m) total += m.size();
  json j{{"format", "ctseg-adam-v1"},
         {"t", s.t},
         {"tensor_sizes", json::array()},
         {"data_file", fs::path(path).filename().string() + ".bin"}};
  for (const auto& m : s.m) j["tensor_sizes"].push_back(m.size());
  std::ofstream hf(path);
  if (!hf) throw std::runtime_error("cannot open for write: " + path);
  hf << j.dump(2) << "\n";
  std::ofstream bf(path + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open for write: " + path + ".bin");
  for (const auto& m : s.m)
    bf.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(float)));
  for (const auto& v : s.v)
    bf.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!bf) throw std::runtime_error("write failed: " + path + ".bin");
  (void)total;
}

void load_adam(const std::string& path, AdamState<float>& s) {
  std::ifstream hf(path);
  if (!hf) throw std::runtime_error("cannot open: " + path);
  json j;
  hf >> j;
  if (j.value("format", "") != "ctseg-adam-v1")
    throw std::runtime_error(path + ": unknown optimizer state format");
  const auto sizes = j.at("tensor_sizes").get<std::vector<size_t>>();
  if (sizes.size() != s.m.size())
    throw std::runtime_error(path + ": optimizer tensor count mismatch");
  size_t total = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] != s.m[i].size())
      throw std::runtime_error(path + ": optimizer tensor size mismatch");
    total += sizes[i];
  }
  s.t = j.at("t").get<int64_t>();
  const std::string bin =
      (fs::path(path).parent_path() / j.at("data_file").get<std::string>()).string();
  std::ifstream bf(bin, std::ios::binary | std::ios::ate);
  if (!bf) throw std::runtime_error("cannot open: " + bin);
  if (static_cast<size_t>(bf.tellg()) != 2 * total * sizeof(float))
    throw std::runtime_error(bin + ": payload size mismatch");
  bf.seekg(0);
  for (auto& m : s.m)
    bf.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(float)));
  for (auto& v : s.v)
    bf.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!bf) throw std::runtime_error("read failed: " + bin);
}

void append_loss_row(std::ofstream& csv, const LossRecord& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "%" PRId64 ",%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.12g\n",
                r.iteration, r.epoch, r.g_total, r.g_adv_xy, r.g_adv_yx, r.cycle,
                r.identity, r.d_x, r.d_y, r.lr);
  csv << buf;
}

constexpr const char* kLossHeader =
    "iteration,epoch,loss_g_total,loss_g_adv_xy,loss_g_adv_yx,loss_cycle,"
    "loss_identity,loss_d_x,loss_d_y,lr\n";

// Random crop to crop_side when the slice is larger; draws two bounded
// integers per oversized slice, in pool order, so the RNG stream is stable.
ad::Tensor<float> crop_to_tensor(const SliceImage& s, int crop, Rng& rng) {
  if (s.height < crop || s.width < crop)
    throw std::invalid_argument("train: slice smaller than crop_side");
  if (s.height == crop && s.width == crop) return slice_to_tensor(s);
  const int oy = static_cast<int>(rng.integer(static_cast<uint64_t>(s.height - crop) + 1));
  const int ox = static_cast<int>(rng.integer(static_cast<uint64_t>(s.width - crop) + 1));
  std::vector<float> v(static_cast<size_t>(crop) * crop);
  for (int y = 0; y < crop; ++y)
    std::copy_n(s.data.begin() + static_cast<size_t>(oy + y) * s.width + ox, crop,
                v.begin() + static_cast<size_t>(y) * crop);
  return ad::Tensor<float>::from_data({1, 1, crop, crop}, std::move(v));
}

ad::Tensor<float> stack_batch(const std::vector<ad::Tensor<float>>& items) {
  if (items.size() == 1) return items[0];
  const int h = items[0].dim(2), w = items[0].dim(3);
  std::vector<float> v;
  v.reserve(items.size() * items[0].size());
  for (const auto& t : items) v.insert(v.end(), t.data().begin(), t.data().end());
  return ad::Tensor<float>::from_data({static_cast<int>(items.size()), 1, h, w},
                                      std::move(v));
}

struct CheckpointPaths {
  fs::path dir;
  std::string gen_xy, gen_yx, dx, dy, opt_g, opt_dx, opt_dy, state, loss_csv;
  explicit CheckpointPaths(const fs::path& d)
      : dir(d),
        gen_xy((d / "generator_xy.json").string()),
        gen_yx((d / "generator_yx.json").string()),
        dx((d / "disc_x.json").string()),
        dy((d / "disc_y.json").string()),
        opt_g((d / "optim_g.json").string()),
        opt_dx((d / "optim_dx.json").string()),
        opt_dy((d / "optim_dy.json").string()),
        state((d / "state.json").string()),
        loss_csv((d / "loss.csv").string()) {}
};

}  // namespace

LoadedModel load_checkpoint_networks(const std::string& checkpoint_dir) {
  CheckpointPaths cp{fs::path(checkpoint_dir)};

  // configs come from the manifests; networks are rebuilt to match
  std::ifstream f(cp.gen_xy);
  if (!f) throw std::runtime_error("cannot open: " + cp.gen_xy);
  json manifest;
  f >> manifest;
  GeneratorConfig gcfg = generator_config_from_json(manifest.at("config").dump());

  std::ifstream fd(cp.dx);
  if (!fd) throw std::runtime_error("cannot open: " + cp.dx);
  json dmanifest;
  fd >> dmanifest;
  DiscriminatorConfig dcfg = discriminator_config_from_json(dmanifest.at("config").dump());

  LoadedModel m{gcfg, dcfg, Generator<float>(gcfg), Generator<float>(gcfg),
                Discriminator<float>(dcfg), Discriminator<float>(dcfg)};
  load_params_file(cp.gen_xy, m.g_xy.parameters(), "generator");
  load_params_file(cp.gen_yx, m.g_yx.parameters(), "generator");
  load_params_file(cp.dx, m.d_x.parameters(), "discriminator");
  load_params_file(cp.dy, m.d_y.parameters(), "discriminator");
  return m;
}

TrainReport train(const std::vector<SliceImage>& pool_x, const std::vector<SliceImage>& pool_y,
                  const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                  const TrainConfig& tcfg, const LossWeights& weights,
                  const std::string& out_dir, const std::string& resume_checkpoint) {
  gcfg.validate();
  dcfg.validate();
  tcfg.validate();
  weights.validate();
  if (pool_x.empty() || pool_y.empty())
    throw std::invalid_argument("train: both slice pools must be non-empty");
  if (gcfg.input_side != tcfg.crop_side)
    throw std::invalid_argument("train: crop_side must equal generator input_side");

  fs::create_directories(fs::path(out_dir) / "checkpoints");
  const std::string loss_csv_path = (fs::path(out_dir) / "loss.csv").string();

  Generator<float> g_xy(gcfg), g_yx(gcfg);
  Discriminator<float> d_x(dcfg), d_y(dcfg);
  auto p_gxy = g_xy.parameters();
  auto p_gyx = g_yx.parameters();
  auto p_dx = d_x.parameters();
  auto p_dy = d_y.parameters();
  std::vector<NamedParam<float>> p_g;  // both generators, updated jointly
  p_g.insert(p_g.end(), p_gxy.begin(), p_gxy.end());
  p_g.insert(p_g.end(), p_gyx.begin(), p_gyx.end());

  auto opt_g = AdamState<float>::for_params(p_g);
  auto opt_dx = AdamState<float>::for_params(p_dx);
  auto opt_dy = AdamState<float>::for_params(p_dy);

  Rng rng;
  int start_epoch = 1;
  int64_t iteration = 0;

  if (resume_checkpoint.empty()) {
    init_weights(p_gxy, Rng::derive(tcfg.seed, 1), tcfg.init_std);
    init_weights(p_gyx, Rng::derive(tcfg.seed, 2), tcfg.init_std);
    init_weights(p_dx, Rng::derive(tcfg.seed, 3), tcfg.init_std);
    init_weights(p_dy, Rng::derive(tcfg.seed, 4), tcfg.init_std);
    rng = Rng(Rng::derive(tcfg.seed, 5));
    std::ofstream csv(loss_csv_path);
    if (!csv) throw std::runtime_error("cannot open for write: " + loss_csv_path);
    csv << kLossHeader;
  } else {
    CheckpointPaths cp{fs::path(resume_checkpoint)};
    load_params_file(cp.gen_xy, p_gxy, "generator");
    load_params_file(cp.gen_yx, p_gyx, "generator");
    load_params_file(cp.dx, p_dx, "discriminator");
    load_params_file(cp.dy, p_dy, "discriminator");
    load_adam(cp.opt_g, opt_g);
    load_adam(cp.opt_dx, opt_dx);
    load_adam(cp.opt_dy, opt_dy);
    std::ifstream sf(cp.state);
    if (!sf) throw std::runtime_error("cannot open: " + cp.state);
    json state;
    sf >> state;
    if (state.at("train_config").dump() != json::parse(train_config_json(tcfg, weights)).dump())
      throw std::runtime_error("resume: training config differs from checkpoint");
    start_epoch = state.at("epoch").get<int>() + 1;
    iteration = state.at("iteration").get<int64_t>();
    rng.deserialize(state.at("rng").get<std::string>());
    // restore the loss curve up to the checkpoint so the resumed CSV is
    // byte-identical to an uninterrupted run
    fs::copy_file(cp.loss_csv, loss_csv_path, fs::copy_options::overwrite_existing);
  }

  std::ofstream csv(loss_csv_path, std::ios::app);
  if (!csv) throw std::runtime_error("cannot open for append: " + loss_csv_path);

  const int last_epoch = tcfg.stop_epoch ? std::min(*tcfg.stop_epoch, tcfg.epochs) : tcfg.epochs;
  const size_t pairs = std::min(pool_x.size(), pool_y.size());
  const size_t iters_per_epoch = pairs / static_cast<size_t>(tcfg.batch_size);
  if (iters_per_epoch == 0)
    throw std::invalid_argument("train: batch_size exceeds the smaller pool");

  const NetFn<float> fn_gxy = [&](const ad::Tensor<float>& t) { return g_xy.forward(t); };
  const NetFn<float> fn_gyx = [&](const ad::Tensor<float>& t) { return g_yx.forward(t); };
  const NetFn<float> fn_dx = [&](const ad::Tensor<float>& t) { return d_x.forward(t); };
  const NetFn<float> fn_dy = [&](const ad::Tensor<float>& t) { return d_y.forward(t); };

  std::string last_checkpoint;
  {
    // an existing checkpoint is the fallback reference for abort messages
    if (!resume_checkpoint.empty()) last_checkpoint = resume_checkpoint;
  }

  auto check_finite = [&](float v, const char* what) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("train: non-finite ") + what + " at iteration " +
                               std::to_string(iteration) + "; last good checkpoint: " +
                               (last_checkpoint.empty() ? "(none)" : last_checkpoint));
    }
  };

  std::vector<size_t> order_x(pool_x.size()), order_y(pool_y.size());
  for (size_t i = 0; i < order_x.size(); ++i) order_x[i] = i;
  for (size_t i = 0; i < order_y.size(); ++i) order_y[i] = i;

  for (int epoch = start_epoch; epoch <= last_epoch; ++epoch) {
    const double lr = lr_schedule(epoch, tcfg);
    rng.shuffle(order_x);
    rng.shuffle(order_y);

    for (size_t it = 0; it < iters_per_epoch; ++it) {
      std::vector<ad::Tensor<float>> xs, ys;
      for (int b = 0; b < tcfg.batch_size; ++b) {
        xs.push_back(crop_to_tensor(pool_x[order_x[it * tcfg.batch_size + b]], tcfg.crop_side, rng));
        ys.push_back(crop_to_tensor(pool_y[order_y[it * tcfg.batch_size + b]], tcfg.crop_side, rng));
      }
      const ad::Tensor<float> x = stack_batch(xs);
      const ad::Tensor<float> y = stack_batch(ys);

      // generator update; discriminator weights frozen for this pass
      set_requires_grad(p_dx, false);
      set_requires_grad(p_dy, false);
      zero_grads(p_g);
      GenLossParts<float> parts = total_generator_loss(fn_gxy, fn_gyx, fn_dx, fn_dy, x, y, weights);
      check_finite(parts.total.item(), "generator loss");
      ad::backward(parts.total);
      adam_step(p_g, opt_g, lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);
      set_requires_grad(p_dx, true);
      set_requires_grad(p_dy, true);

      // discriminator updates on freshly synthesized, detached fakes
      ad::Tensor<float> fake_x, fake_y;
      {
        ad::NoGradGuard ng;
        fake_y = g_xy.forward(x);
        fake_x = g_yx.forward(y);
      }
      zero_grads(p_dx);
      ad::Tensor<float> loss_dx = lsgan_d_loss(fn_dx, x, fake_x);
      check_finite(loss_dx.item(), "discriminator X loss");
      ad::backward(loss_dx);
      adam_step(p_dx, opt_dx, lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);

      zero_grads(p_dy);
      ad::Tensor<float> loss_dy = lsgan_d_loss(fn_dy, y, fake_y);
      check_finite(loss_dy.item(), "discriminator Y loss");
      ad::backward(loss_dy);
      adam_step(p_dy, opt_dy, lr, tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps);

      ++iteration;
      LossRecord rec;
      rec.iteration = iteration;
      rec.epoch = epoch;
      rec.g_total = parts.total.item();
      rec.g_adv_xy = parts.adv_xy.item();
      rec.g_adv_yx = parts.adv_yx.item();
      rec.cycle = parts.cycle.item();
      rec.identity = parts.identity.item();
      rec.d_x = loss_dx.item();
      rec.d_y = loss_dy.item();
      rec.lr = lr;
      append_loss_row(csv, rec);
    }

    // epoch checkpoint
    csv.flush();
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d", epoch);
    CheckpointPaths cp{fs::path(out_dir) / "checkpoints" / name};
    fs::create_directories(cp.dir);
    save_params_file(cp.gen_xy, p_gxy, "generator", generator_config_json(gcfg));
    save_params_file(cp.gen_yx, p_gyx, "generator", generator_config_json(gcfg));
    save_params_file(cp.dx, p_dx, "discriminator", discriminator_config_json(dcfg));
    save_params_file(cp.dy, p_dy, "discriminator", discriminator_config_json(dcfg));
    save_adam(cp.opt_g, opt_g);
    save_adam(cp.opt_dx, opt_dx);
    save_adam(cp.opt_dy, opt_dy);
    json state{{"epoch", epoch},
               {"iteration", iteration},
               {"rng", rng.serialize()},
               {"train_config", json::parse(train_config_json(tcfg, weights))}};
    std::ofstream sf(cp.state);
    if (!sf) throw std::runtime_error("cannot open for write: " + cp.state);
    sf << state.dump(2) << "\n";
    sf.close();
    fs::copy_file(loss_csv_path, cp.loss_csv, fs::copy_options::overwrite_existing);
    last_checkpoint = cp.dir.string();

    if (tcfg.checkpoint_keep > 0 && epoch - tcfg.checkpoint_keep >= 1) {
      char old_name[32];
      std::snprintf(old_name, sizeof(old_name), "epoch_%04d", epoch - tcfg.checkpoint_keep);
      const fs::path old_dir = fs::path(out_dir) / "checkpoints" / old_name;
      if (fs::exists(old_dir)) fs::remove_all(old_dir);
    }
  }

  TrainReport report;
  report.epochs_run = last_epoch - start_epoch + 1;
  report.iterations = iteration;
  report.last_checkpoint = last_checkpoint;
  report.loss_csv = loss_csv_path;
  return report;
}

}  // namespace ctseg
