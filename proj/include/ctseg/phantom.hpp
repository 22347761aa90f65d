#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/imgvol.hpp"

namespace ctseg {

// Synthetic chest phantom: body ellipsoid with two lung ellipsoids, smooth
// intensity noise, tube-like vessels, and (for infected volumes) soft-edged
// superellipsoid lesions at ground-glass-like contrast. Fully deterministic
// per seed.
struct PhantomSpec {
  int size = 64;  // voxels per side, isotropic 1 mm grid
  uint64_t seed = 0;
  double lung_hu_lo = -850, lung_hu_hi = -700;
  double body_hu_lo = 0, body_hu_hi = 60;
  int vessels_per_lung = 5;
  double vessel_hu = -150;
  int lesion_count_min = 1, lesion_count_max = 3;
  double lesion_hu_lo = -600, lesion_hu_hi = -300;
  double lesion_radius_min = 3.5, lesion_radius_max = 7.5;  // voxels
  double noise_hu = 25;  // smooth noise amplitude inside body/lung

  void validate() const;
};

struct HealthyPhantom {
  CtVolume volume;
  BinaryMask lung;
};

struct InfectedPhantom {
  CtVolume volume;
  BinaryMask lung;
  BinaryMask lesions;
  CtVolume paired_healthy;  // oracle only, never part of training data
  bool placement_shortfall = false;
};

HealthyPhantom gen_healthy(const PhantomSpec& spec);
InfectedPhantom gen_infected(const PhantomSpec& spec);

// Writes a training slice store (healthy + infected slices with manifest) and
// a test set of infected volumes with lung masks, ground-truth lesion masks
// and the paired healthy volumes. Per-volume seeds are derived from
// spec.seed; train and test id sets are disjoint.
struct DatasetSummary {
  std::string train_manifest;  // slice-level
  std::string test_manifest;   // case-level JSON
  int n_healthy_slices = 0;
  int n_infected_slices = 0;
  int n_test_cases = 0;
};

DatasetSummary gen_dataset(const PhantomSpec& spec, int n_train_healthy,
                           int n_train_infected, int n_test, const std::string& out_dir,
                           int crop_side = 0 /* 0 = spec.size */);

struct TestCasePaths {
  std::string id;
  std::string infected, lung, lesion_gt, healthy_oracle;
};
std::vector<TestCasePaths> read_test_manifest(const std::string& path);

}  // namespace ctseg
