#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "ctseg/cyclegan.hpp"
#include "ctseg/nets.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/postproc.hpp"

namespace ctseg {

// One config file drives every subcommand. Defaults are the training and
// post-processing settings of the 256x256 setup; the phantom section covers
// desk-scale runs. Unknown keys are rejected and every module precondition is
// checked before any work starts.
struct RunConfig {
  uint64_t seed = 1234;

  struct {
    double window_lo = -800.0;
    double window_hi = 100.0;
    double resample_mm = 1.0;
    int crop_side = 256;
  } imgvol;

  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  TrainConfig train;
  LossWeights weights;

  PostprocParams postproc;

  struct {
    std::array<int, 3> region_splits{2, 2, 3};  // x (L-R), y (A-P), z (S-I)
    int min_voxels = 1;
  } metrics;

  PhantomSpec phantom;
  struct {
    int train_healthy = 20;
    int train_infected = 20;
    int test = 10;
  } phantom_dataset;

  RunConfig();

  void validate() const;
  std::string to_json() const;  // full echo, all defaults filled in
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace ctseg
