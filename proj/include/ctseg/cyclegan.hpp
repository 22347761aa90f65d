#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/autodiff.hpp"
#include "ctseg/imgvol.hpp"
#include "ctseg/nets.hpp"

namespace ctseg {

struct LossWeights {
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;

  void validate() const {
    if (lambda_cycle < 0 || lambda_identity < 0)
      throw std::invalid_argument("loss weights must be >= 0");
  }
};

struct TrainConfig {
  int epochs = 100;
  double lr0 = 2e-4;
  int decay_start_epoch = 50;
  int batch_size = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<int> stop_epoch;  // paper-scale default: 85
  int crop_side = 256;
  uint64_t seed = 0;
  double init_std = 0.02;
  bool fake_buffer = false;  // historical fake-image pool; off: fakes go straight to D
  int checkpoint_keep = 0;   // 0 = keep all epoch checkpoints

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (!(decay_start_epoch > 0 && decay_start_epoch < epochs))
      throw std::invalid_argument("train: need 0 < decay_start_epoch < epochs");
    if (!(lr0 > 0)) throw std::invalid_argument("train: lr0 must be > 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (stop_epoch && (*stop_epoch < 1 || *stop_epoch > epochs))
      throw std::invalid_argument("train: stop_epoch out of range");
    if (crop_side < 1) throw std::invalid_argument("train: crop_side must be >= 1");
  }
};

// lr0 until decay_start_epoch, then linear to 0 at the final epoch.
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) throw std::invalid_argument("lr_schedule: epoch out of range");
  if (epoch <= cfg.decay_start_epoch) return cfg.lr0;
  return cfg.lr0 * static_cast<double>(cfg.epochs - epoch) /
         static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
}

// ---- losses -------------------------------------------------------------------

template <class T>
using NetFn = std::function<ad::Tensor<T>(const ad::Tensor<T>&)>;

// LSGAN discriminator loss: mean((D(real)-1)^2) + mean(D(fake)^2).
// `fake` must already be detached from its generator.
template <class T>
ad::Tensor<T> lsgan_d_loss(const NetFn<T>& d, const ad::Tensor<T>& real,
                           const ad::Tensor<T>& fake) {
  if (fake.requires_grad())
    throw std::invalid_argument("lsgan_d_loss: fake batch must be detached");
  ad::Tensor<T> dr = d(real);
  ad::Tensor<T> df = d(fake);
  if (dr.shape() != df.shape())
    throw std::invalid_argument("lsgan_d_loss: discriminator output shapes differ");
  auto ones = ad::Tensor<T>::full(dr.shape(), T(1));
  auto zeros = ad::Tensor<T>::zeros(df.shape());
  return ad::add(ad::mse_loss(dr, ones), ad::mse_loss(df, zeros));
}

// LSGAN generator loss: mean((D(fake)-1)^2), gradient flowing through fake.
template <class T>
ad::Tensor<T> lsgan_g_loss(const NetFn<T>& d, const ad::Tensor<T>& fake) {
  ad::Tensor<T> df = d(fake);
  auto ones = ad::Tensor<T>::full(df.shape(), T(1));
  return ad::mse_loss(df, ones);
}

// mean-l1(G_YX(G_XY(x)), x) + mean-l1(G_XY(G_YX(y)), y)
template <class T>
ad::Tensor<T> cycle_loss(const NetFn<T>& g_xy, const NetFn<T>& g_yx,
                         const ad::Tensor<T>& x, const ad::Tensor<T>& y) {
  return ad::add(ad::l1_loss(g_yx(g_xy(x)), x), ad::l1_loss(g_xy(g_yx(y)), y));
}

// mean-l1(G_XY(y), y) + mean-l1(G_YX(x), x)
template <class T>
ad::Tensor<T> identity_loss(const NetFn<T>& g_xy, const NetFn<T>& g_yx,
                            const ad::Tensor<T>& x, const ad::Tensor<T>& y) {
  return ad::add(ad::l1_loss(g_xy(y), y), ad::l1_loss(g_yx(x), x));
}

template <class T>
struct GenLossParts {
  ad::Tensor<T> adv_xy, adv_yx, cycle, identity, total;
};

// total = adv_xy + adv_yx + lambda_cycle * cycle + lambda_identity * identity
template <class T>
ad::Tensor<T> combine_generator_loss(const ad::Tensor<T>& adv_xy, const ad::Tensor<T>& adv_yx,
                                     const ad::Tensor<T>& cycle, const ad::Tensor<T>& identity,
                                     const LossWeights& w) {
  auto weighted = ad::add(ad::scale(cycle, static_cast<T>(w.lambda_cycle)),
                          ad::scale(identity, static_cast<T>(w.lambda_identity)));
  return ad::add(ad::add(adv_xy, adv_yx), weighted);
}

template <class T>
GenLossParts<T> total_generator_loss(const NetFn<T>& g_xy, const NetFn<T>& g_yx,
                                     const NetFn<T>& d_x, const NetFn<T>& d_y,
                                     const ad::Tensor<T>& x, const ad::Tensor<T>& y,
                                     const LossWeights& w) {
  w.validate();
  GenLossParts<T> parts;
  ad::Tensor<T> fake_y = g_xy(x);
  ad::Tensor<T> fake_x = g_yx(y);
  parts.adv_xy = lsgan_g_loss(d_y, fake_y);
  parts.adv_yx = lsgan_g_loss(d_x, fake_x);
  parts.cycle = ad::add(ad::l1_loss(g_yx(fake_y), x), ad::l1_loss(g_xy(fake_x), y));
  parts.identity = identity_loss(g_xy, g_yx, x, y);
  parts.total = combine_generator_loss(parts.adv_xy, parts.adv_yx, parts.cycle,
                                       parts.identity, w);
  return parts;
}

// ---- ADAM ----------------------------------------------------------------------

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  int64_t t = 0;

  static AdamState for_params(const std::vector<NamedParam<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.size(), T(0));
      s.v.emplace_back(p.tensor.size(), T(0));
    }
    return s;
  }
};

// Standard bias-corrected ADAM update over the parameter list. Gradients are
// read from each tensor's grad buffer; missing grads count as zero. Non-finite
// gradients abort.
template <class T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, double lr,
               double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (state.m[i].size() != p.size())
      throw std::invalid_argument("adam_step: moment shape mismatch for " + params[i].name);
    const bool has_grad = p.has_grad();
    const std::vector<T>* gptr = has_grad ? &p.grad() : nullptr;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& d = p.data();
    for (size_t j = 0; j < d.size(); ++j) {
      const double g = gptr ? static_cast<double>((*gptr)[j]) : 0.0;
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in " + params[i].name);
      const double mj = beta1 * m[j] + (1.0 - beta1) * g;
      const double vj = beta2 * v[j] + (1.0 - beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      d[j] = static_cast<T>(d[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---- training ------------------------------------------------------------------

struct LossRecord {
  int64_t iteration = 0;
  int epoch = 0;
  float g_total = 0, g_adv_xy = 0, g_adv_yx = 0, cycle = 0, identity = 0;
  float d_x = 0, d_y = 0;
  double lr = 0;
};

struct TrainReport {
  int epochs_run = 0;
  int64_t iterations = 0;
  std::string last_checkpoint;  // directory of the newest epoch checkpoint
  std::string loss_csv;
};

// Alternating min-max training over two unpaired slice pools. Writes an epoch
// checkpoint directory per epoch plus a running loss CSV under `out_dir`.
// The whole trajectory is a pure function of (seed, data, config); resuming
// from a checkpoint reproduces the uninterrupted run bit-exactly.
TrainReport train(const std::vector<SliceImage>& pool_x_infected,
                  const std::vector<SliceImage>& pool_y_healthy,
                  const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                  const TrainConfig& tcfg, const LossWeights& weights,
                  const std::string& out_dir,
                  const std::string& resume_checkpoint = "");

// Loads the four networks of a checkpoint directory (shape-validated).
struct LoadedModel {
  GeneratorConfig gcfg;
  DiscriminatorConfig dcfg;
  Generator<float> g_xy, g_yx;
  Discriminator<float> d_x, d_y;
};
LoadedModel load_checkpoint_networks(const std::string& checkpoint_dir);

// Runs G_XY without recording gradients; output keeps shape and provenance.
SliceImage synthesize_healthy(const Generator<float>& g_xy, const SliceImage& infected);

// Tensor <-> slice helpers shared by trainer, CLI and tests.
ad::Tensor<float> slice_to_tensor(const SliceImage& s);
SliceImage tensor_to_slice(const ad::Tensor<float>& t, const SliceImage& like);

}  // namespace ctseg
