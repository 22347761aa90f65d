#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "ctseg/nets.hpp"
#include "ctseg/rng.hpp"

using namespace ctseg;

namespace {

ad::Tensor<float> random_input(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(ad::Tensor<float>::count(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return ad::Tensor<float>::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("generator config: channel progression") {
  GeneratorConfig cfg;  // stages 8, base 64, max 512
  CHECK(cfg.stage_channels() ==
        std::vector<int>{64, 128, 256, 512, 512, 512, 512, 512});

  GeneratorConfig small;
  small.stages = 6;
  small.base_channels = 16;
  small.input_side = 64;
  CHECK(small.stage_channels() == std::vector<int>{16, 32, 64, 128, 256, 512});
}

TEST_CASE("generator config: side must be 2^stages") {
  GeneratorConfig bad;
  bad.stages = 8;
  bad.input_side = 128;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(Generator<float>(bad), std::invalid_argument);
}

TEST_CASE("generator forward is shape-preserving at phantom scale") {
  GeneratorConfig cfg;
  cfg.stages = 6;
  cfg.base_channels = 8;
  cfg.input_side = 64;
  Generator<float> g(cfg);
  init_weights(g.parameters(), 7);
  auto out = g.forward(random_input({1, 1, 64, 64}, 3));
  CHECK(out.shape() == std::vector<int>{1, 1, 64, 64});
  for (float v : out.data()) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("generator encoder feature-map sides halve to the 1x1 bottleneck") {
  // derived by repeated halving from 256: 128,64,32,16,8,4,2,1
  int side = 256;
  std::vector<int> sides;
  for (int s = 0; s < 8; ++s) {
    side /= 2;
    sides.push_back(side);
  }
  CHECK(sides == std::vector<int>{128, 64, 32, 16, 8, 4, 2, 1});
  // a tiny config exercises the same halve-to-1x1 geometry end to end
  GeneratorConfig cfg;
  cfg.stages = 3;
  cfg.base_channels = 4;
  cfg.input_side = 8;
  Generator<float> g(cfg);
  init_weights(g.parameters(), 1);
  CHECK(g.forward(random_input({2, 1, 8, 8}, 5)).shape() ==
        std::vector<int>{2, 1, 8, 8});
}

TEST_CASE("discriminator: receptive field facts") {
  DiscriminatorConfig cfg;  // kernel 4, strides [2,2,2,1,1]
  CHECK(receptive_field(cfg) == 70);

  DiscriminatorConfig single;
  single.layers = 1;
  single.kernel = 3;
  single.strides = {1};
  single.channels = {1};
  CHECK(receptive_field(single) == 3);

  DiscriminatorConfig two;
  two.layers = 2;
  two.kernel = 4;
  two.strides = {2, 2};
  two.channels = {8, 1};
  CHECK(receptive_field(two) == 10);
}

TEST_CASE("discriminator: output sides") {
  DiscriminatorConfig cfg;
  CHECK(discriminator_output_side(cfg, 256) == 30);  // 128,64,32,31,30
  const int side70 = discriminator_output_side(cfg, 70);
  CHECK(side70 >= 1);
  // the receptive field of any unit covers a full 70x70 input
  CHECK(receptive_field(cfg) == 70);
}

TEST_CASE("discriminator forward shapes and batch behavior") {
  DiscriminatorConfig cfg = DiscriminatorConfig::with_base_channels(8);
  Discriminator<float> d(cfg);
  init_weights(d.parameters(), 11);
  auto out1 = d.forward(random_input({1, 1, 64, 64}, 2));
  CHECK(out1.shape()[0] == 1);
  CHECK(out1.shape()[1] == 1);
  auto out2 = d.forward(random_input({2, 1, 64, 64}, 2));
  CHECK(out2.shape()[0] == 2);
  CHECK(out2.shape()[1] == out1.shape()[1]);
  CHECK(out2.shape()[2] == out1.shape()[2]);
  CHECK(out2.shape()[3] == out1.shape()[3]);
}

TEST_CASE("init_weights: determinism and moments") {
  GeneratorConfig cfg;
  cfg.stages = 5;
  cfg.base_channels = 16;
  cfg.max_channels = 64;
  cfg.input_side = 32;
  Generator<float> a(cfg), b(cfg);
  init_weights(a.parameters(), 99);
  init_weights(b.parameters(), 99);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.data() == pb[i].tensor.data());

  // collect >= 1e5 weight draws and audit the sampler
  std::vector<float> ws;
  for (const auto& p : pa)
    if (p.kind == ParamKind::weight)
      ws.insert(ws.end(), p.tensor.data().begin(), p.tensor.data().end());
  REQUIRE(ws.size() >= 100000);
  double mean = 0;
  for (float w : ws) mean += w;
  mean /= static_cast<double>(ws.size());
  CHECK(std::abs(mean) < 4.0 * 0.02 / std::sqrt(static_cast<double>(ws.size())));
  double var = 0;
  for (float w : ws) var += (w - mean) * (w - mean);
  const double sd = std::sqrt(var / static_cast<double>(ws.size()));
  CHECK(sd > 0.018);
  CHECK(sd < 0.022);

  // biases zero, gammas one
  for (const auto& p : pa) {
    if (p.kind == ParamKind::bias || p.kind == ParamKind::beta)
      for (float v : p.tensor.data()) CHECK(v == 0.0f);
    if (p.kind == ParamKind::gamma)
      for (float v : p.tensor.data()) CHECK(v == 1.0f);
  }
}

TEST_CASE("both networks produce finite outputs over 100 seeds") {
  GeneratorConfig gcfg;
  gcfg.stages = 4;
  gcfg.base_channels = 8;
  gcfg.input_side = 16;
  DiscriminatorConfig dcfg = DiscriminatorConfig::with_base_channels(8);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Generator<float> g(gcfg);
    Discriminator<float> d(dcfg);
    init_weights(g.parameters(), seed);
    init_weights(d.parameters(), seed + 1000);
    auto input = random_input({1, 1, 16, 16}, seed + 5000);
    for (float v : g.forward(input).data()) REQUIRE(std::isfinite(v));
    for (float v : d.forward(input).data()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("parameter serialization round-trips bit-exactly with config echo") {
  GeneratorConfig cfg;
  cfg.stages = 4;
  cfg.base_channels = 8;
  cfg.input_side = 16;
  Generator<float> g(cfg);
  init_weights(g.parameters(), 31);

  const auto dir = std::filesystem::temp_directory_path() / "ctseg_tests" / "params";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "gen.json").string();
  save_params_file(path, g.parameters(), "generator", generator_config_json(cfg));

  Generator<float> g2(cfg);
  const std::string echo = load_params_file(path, g2.parameters(), "generator");
  const GeneratorConfig cfg2 = generator_config_from_json(echo);
  CHECK(cfg2.stages == cfg.stages);
  CHECK(cfg2.base_channels == cfg.base_channels);
  auto pa = g.parameters(), pb = g2.parameters();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.data() == pb[i].tensor.data());

  // shape validation on load
  GeneratorConfig other = cfg;
  other.base_channels = 16;
  Generator<float> g3(other);
  CHECK_THROWS_AS(load_params_file(path, g3.parameters(), "generator"), std::runtime_error);
  CHECK_THROWS_AS(load_params_file(path, g2.parameters(), "discriminator"), std::runtime_error);
}
