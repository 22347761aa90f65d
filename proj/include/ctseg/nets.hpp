#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/autodiff.hpp"
#include "ctseg/rng.hpp"

namespace ctseg {

// U-net style generator: `stages` stride-2 3x3 encoder convs down to a 1x1
// bottleneck, symmetric decoder of 2x nearest upsampling + 3x3 convs, skip
// concatenation at every stage except the bottleneck, tanh output.
struct GeneratorConfig {
  int stages = 8;
  int base_channels = 64;
  int max_channels = 512;
  int kernel = 3;
  int in_channels = 1;
  int out_channels = 1;
  int input_side = 256;

  void validate() const;
  // Encoder output channels per stage: min(base * 2^s, max).
  std::vector<int> stage_channels() const;
};

// 70x70 patch discriminator: 5 conv layers, kernel 4, strides [2,2,2,1,1],
// padding 1, LeakyReLU(0.2) after layers 1-4, instance norm on layers 2-4,
// raw single-channel output map.
struct DiscriminatorConfig {
  int layers = 5;
  int kernel = 4;
  std::vector<int> strides{2, 2, 2, 1, 1};
  std::vector<int> channels{64, 128, 256, 512, 1};
  double leaky_slope = 0.2;
  int padding = 1;

  void validate() const;
  static DiscriminatorConfig with_base_channels(int base);
};

// Receptive field of one output unit: rf += (k-1)*jump, jump *= stride.
int receptive_field(const DiscriminatorConfig& cfg);

// Output spatial side for a square input of the given side.
int discriminator_output_side(const DiscriminatorConfig& cfg, int input_side);

enum class ParamKind { weight, bias, gamma, beta };

template <class T>
struct NamedParam {
  std::string name;
  ParamKind kind;
  ad::Tensor<T> tensor;
};

template <class T>
struct ConvLayer {
  ad::Tensor<T> w, b;
  int stride = 1;
  int padding = 1;

  static ConvLayer make(int in_ch, int out_ch, int k, int stride, int padding) {
    ConvLayer l;
    l.w = ad::Tensor<T>::zeros({out_ch, in_ch, k, k}, true);
    l.b = ad::Tensor<T>::zeros({out_ch}, true);
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    return ad::conv2d(x, w, b, stride, padding);
  }
};

template <class T>
struct NormLayer {
  ad::Tensor<T> gamma, beta;
  T eps = T(1e-5);

  static NormLayer make(int channels) {
    NormLayer n;
    n.gamma = ad::Tensor<T>::full({channels}, T(1), true);
    n.beta = ad::Tensor<T>::zeros({channels}, true);
    return n;
  }
  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const {
    return ad::instance_norm(x, gamma, beta, eps);
  }
};

template <class T>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg);
  ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
  std::vector<NamedParam<T>> parameters() const;
  const GeneratorConfig& config() const { return cfg_; }
  int64_t parameter_count() const;

 private:
  struct Stage {
    ConvLayer<T> conv;
    std::optional<NormLayer<T>> norm;
  };
  GeneratorConfig cfg_;
  std::vector<Stage> enc_, dec_;
};

template <class T>
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& cfg);
  ad::Tensor<T> forward(const ad::Tensor<T>& x) const;
  std::vector<NamedParam<T>> parameters() const;
  const DiscriminatorConfig& config() const { return cfg_; }
  int64_t parameter_count() const;

 private:
  DiscriminatorConfig cfg_;
  std::vector<ConvLayer<T>> convs_;
  std::vector<std::optional<NormLayer<T>>> norms_;
};

// Weights ~ N(0, std^2) from the seeded generator, biases 0, gammas 1,
// betas 0. Same seed, same parameter order => bit-identical values.
template <class T>
void init_weights(std::vector<NamedParam<T>> params, uint64_t seed, double std_dev = 0.02) {
  if (!(std_dev > 0)) throw std::invalid_argument("init_weights: std must be > 0");
  Rng rng(seed);
  for (auto& p : params) {
    auto& d = p.tensor.data();
    switch (p.kind) {
      case ParamKind::weight:
        for (auto& v : d) v = static_cast<T>(rng.normal(0.0, std_dev));
        break;
      case ParamKind::bias:
      case ParamKind::beta:
        std::fill(d.begin(), d.end(), T(0));
        break;
      case ParamKind::gamma:
        std::fill(d.begin(), d.end(), T(1));
        break;
    }
  }
}

// Parameter serialization: JSON manifest (names, shapes, config echo) at
// `path`, concatenated little-endian payload at `path + ".bin"`. Round-trips
// bit-exactly; loads validate names and shapes against the live network.
void save_params_file(const std::string& path, const std::vector<NamedParam<float>>& params,
                      const std::string& config_kind, const std::string& config_json);
// Returns the config echo JSON string.
std::string load_params_file(const std::string& path, std::vector<NamedParam<float>> params,
                             const std::string& config_kind);

std::string generator_config_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const std::string& text);
std::string discriminator_config_json(const DiscriminatorConfig& cfg);
DiscriminatorConfig discriminator_config_from_json(const std::string& text);

// ---- template definitions ----------------------------------------------------

template <class T>
Generator<T>::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const auto ch = cfg.stage_channels();
  const int s = cfg.stages;

  int in_ch = cfg.in_channels;
  for (int i = 0; i < s; ++i) {
    Stage st;
    st.conv = ConvLayer<T>::make(in_ch, ch[i], cfg.kernel, 2, 1);
    const int side_after = cfg.input_side >> (i + 1);
    // norm everywhere except the final output conv; a 1x1 bottleneck plane
    // cannot be normalized (needs >= 2 samples), so it is skipped there
    if (side_after >= 2) st.norm = NormLayer<T>::make(ch[i]);
    enc_.push_back(std::move(st));
    in_ch = ch[i];
  }
  for (int j = 0; j < s; ++j) {
    Stage st;
    const int dec_in = j == 0 ? ch[s - 1] : 2 * ch[s - 1 - j];
    const int dec_out = j == s - 1 ? cfg.out_channels : ch[s - 2 - j];
    st.conv = ConvLayer<T>::make(dec_in, dec_out, cfg.kernel, 1, 1);
    if (j != s - 1) st.norm = NormLayer<T>::make(dec_out);
    dec_.push_back(std::move(st));
  }
}

template <class T>
ad::Tensor<T> Generator<T>::forward(const ad::Tensor<T>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != cfg_.in_channels ||
      x.dim(2) != cfg_.input_side || x.dim(3) != cfg_.input_side)
    throw std::invalid_argument("generator: input must be [N," +
                                std::to_string(cfg_.in_channels) + "," +
                                std::to_string(cfg_.input_side) + "," +
                                std::to_string(cfg_.input_side) + "]");
  const int s = cfg_.stages;
  std::vector<ad::Tensor<T>> skips;
  ad::Tensor<T> h = x;
  for (int i = 0; i < s; ++i) {
    h = enc_[i].conv(h);
    if (enc_[i].norm) h = (*enc_[i].norm)(h);
    h = ad::leaky_relu(h, T(0.2));
    if (i < s - 1) skips.push_back(h);
  }
  for (int j = 0; j < s; ++j) {
    if (j > 0) h = ad::concat_channels(h, skips[s - 1 - j]);
    h = ad::upsample_nearest2x(h);
    h = dec_[j].conv(h);
    if (j < s - 1) {
      h = (*dec_[j].norm)(h);
      h = ad::relu(h);
    } else {
      h = ad::tanh(h);
    }
  }
  return h;
}

template <class T>
std::vector<NamedParam<T>> Generator<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  auto push_stage = [&out](const std::string& prefix, const Stage& st) {
    out.push_back({prefix + ".conv.w", ParamKind::weight, st.conv.w});
    out.push_back({prefix + ".conv.b", ParamKind::bias, st.conv.b});
    if (st.norm) {
      out.push_back({prefix + ".norm.gamma", ParamKind::gamma, st.norm->gamma});
      out.push_back({prefix + ".norm.beta", ParamKind::beta, st.norm->beta});
    }
  };
  for (size_t i = 0; i < enc_.size(); ++i) push_stage("enc" + std::to_string(i), enc_[i]);
  for (size_t j = 0; j < dec_.size(); ++j) push_stage("dec" + std::to_string(j), dec_[j]);
  return out;
}

template <class T>
int64_t Generator<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += static_cast<int64_t>(p.tensor.size());
  return n;
}

template <class T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  int in_ch = 1;
  for (int i = 0; i < cfg.layers; ++i) {
    convs_.push_back(ConvLayer<T>::make(in_ch, cfg.channels[i], cfg.kernel,
                                        cfg.strides[i], cfg.padding));
    // instance norm on layers 2-4 only
    if (i >= 1 && i <= 3 && i != cfg.layers - 1)
      norms_.push_back(NormLayer<T>::make(cfg.channels[i]));
    else
      norms_.push_back(std::nullopt);
    in_ch = cfg.channels[i];
  }
}

template <class T>
ad::Tensor<T> Discriminator<T>::forward(const ad::Tensor<T>& x) const {
  ad::Tensor<T> h = x;
  for (int i = 0; i < cfg_.layers; ++i) {
    h = convs_[i](h);
    if (norms_[i]) h = (*norms_[i])(h);
    if (i != cfg_.layers - 1) h = ad::leaky_relu(h, static_cast<T>(cfg_.leaky_slope));
  }
  return h;
}

template <class T>
std::vector<NamedParam<T>> Discriminator<T>::parameters() const {
  std::vector<NamedParam<T>> out;
  for (size_t i = 0; i < convs_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    out.push_back({prefix + ".conv.w", ParamKind::weight, convs_[i].w});
    out.push_back({prefix + ".conv.b", ParamKind::bias, convs_[i].b});
    if (norms_[i]) {
      out.push_back({prefix + ".norm.gamma", ParamKind::gamma, norms_[i]->gamma});
      out.push_back({prefix + ".norm.beta", ParamKind::beta, norms_[i]->beta});
    }
  }
  return out;
}

template <class T>
int64_t Discriminator<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += static_cast<int64_t>(p.tensor.size());
  return n;
}

}  // namespace ctseg
