#include "ctseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "ctseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctseg {

void PhantomSpec::validate() const {
  if (size < 16) throw std::invalid_argument("phantom: size must be >= 16");
  if (!(lung_hu_lo < lung_hu_hi) || !(body_hu_lo < body_hu_hi) ||
      !(lesion_hu_lo < lesion_hu_hi))
    throw std::invalid_argument("phantom: HU ranges must be non-empty");
  if (!(lesion_hu_lo > lung_hu_hi))
    throw std::invalid_argument("phantom: lesion HU range must lie above the lung range");
  if (lesion_hu_lo < -800 || lesion_hu_hi > 100)
    throw std::invalid_argument("phantom: lesion HU range must lie inside the [-800,100] window");
  if (lesion_count_min < 0 || lesion_count_max < lesion_count_min)
    throw std::invalid_argument("phantom: bad lesion count range");
  if (!(lesion_radius_min > 0) || lesion_radius_max < lesion_radius_min)
    throw std::invalid_argument("phantom: bad lesion radius range");
  if (vessels_per_lung < 0) throw std::invalid_argument("phantom: bad vessel density");
  if (noise_hu < 0) throw std::invalid_argument("phantom: noise amplitude must be >= 0");
}

namespace {

// Smooth value noise: seeded lattice (period `cell` voxels), trilinear
// interpolation, range [-1, 1].
class ValueNoise {
 public:
  ValueNoise(int size, int cell, Rng& rng) : cell_(cell) {
    n_ = size / cell + 3;
    lattice_.resize(static_cast<size_t>(n_) * n_ * n_);
    for (auto& v : lattice_) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }

  double at(double x, double y, double z) const {
    const double fx = x / cell_, fy = y / cell_, fz = z / cell_;
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy), iz = static_cast<int>(fz);
    const double tx = smooth(fx - ix), ty = smooth(fy - iy), tz = smooth(fz - iz);
    double c[2][2][2];
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) c[dz][dy][dx] = lat(ix + dx, iy + dy, iz + dz);
    const double c00 = c[0][0][0] + tx * (c[0][0][1] - c[0][0][0]);
    const double c01 = c[0][1][0] + tx * (c[0][1][1] - c[0][1][0]);
    const double c10 = c[1][0][0] + tx * (c[1][0][1] - c[1][0][0]);
    const double c11 = c[1][1][0] + tx * (c[1][1][1] - c[1][1][0]);
    const double c0 = c00 + ty * (c01 - c00);
    const double c1 = c10 + ty * (c11 - c10);
    return c0 + tz * (c1 - c0);
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double lat(int x, int y, int z) const {
    return lattice_[(static_cast<size_t>(z) * n_ + y) * n_ + x];
  }
  int cell_;
  int n_;
  std::vector<float> lattice_;
};

struct Ellipsoid {
  double cx, cy, cz;
  double rx, ry, rz;

  double rho(double x, double y, double z) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry, dz = (z - cz) / rz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  bool contains(double x, double y, double z) const { return rho(x, y, z) <= 1.0; }
};

struct Segment {
  double ax, ay, az, bx, by, bz, radius;

  double dist(double x, double y, double z) const {
    const double vx = bx - ax, vy = by - ay, vz = bz - az;
    const double wx = x - ax, wy = y - ay, wz = z - az;
    const double vv = vx * vx + vy * vy + vz * vz;
    double t = vv > 0 ? (wx * vx + wy * vy + wz * vz) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = wx - t * vx, dy = wy - t * vy, dz = wz - t * vz;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

struct Lesion {
  double cx, cy, cz;
  double rx, ry, rz;
  double exponent;
  double hu;

  double rho(double x, double y, double z) const {
    const double dx = std::abs(x - cx) / rx;
    const double dy = std::abs(y - cy) / ry;
    const double dz = std::abs(z - cz) / rz;
    return std::pow(std::pow(dx, exponent) + std::pow(dy, exponent) + std::pow(dz, exponent),
                    1.0 / exponent);
  }
};

// soft edge entirely outside the support: full lesion value for rho <= 1,
// linear fade to 0 at rho = 1.2
constexpr double kLesionEdge = 1.2;

double lesion_weight(double rho) {
  if (rho <= 1.0) return 1.0;
  if (rho >= kLesionEdge) return 0.0;
  return (kLesionEdge - rho) / (kLesionEdge - 1.0);
}

struct PhantomScene {
  Ellipsoid body;
  Ellipsoid lungs[2];
  std::vector<Segment> vessels;
};

PhantomScene make_scene(const PhantomSpec& spec, Rng& rng) {
  const double s = spec.size;
  const double c = s / 2.0;
  auto jitter = [&rng](double v) { return v * rng.uniform(0.94, 1.06); };

  PhantomScene scene;
  scene.body = {c, c, c, jitter(0.44 * s), jitter(0.38 * s), jitter(0.47 * s)};
  for (int i = 0; i < 2; ++i) {
    const double side = i == 0 ? -1.0 : 1.0;
    scene.lungs[i] = {c + side * jitter(0.21 * s),
                      c + rng.uniform(-0.015, 0.015) * s,
                      c + rng.uniform(-0.015, 0.015) * s,
                      jitter(0.155 * s),
                      jitter(0.24 * s),
                      jitter(0.34 * s)};
  }
  for (int i = 0; i < 2; ++i) {
    const auto& l = scene.lungs[i];
    for (int v = 0; v < spec.vessels_per_lung; ++v) {
      Segment seg;
      // chord between two interior points, biased toward the hilum side
      const double u1 = rng.uniform(0.0, 0.75), u2 = rng.uniform(0.3, 0.95);
      const double th1 = rng.uniform(0.0, 6.283185307179586);
      const double ph1 = rng.uniform(0.2, 2.9);
      const double th2 = rng.uniform(0.0, 6.283185307179586);
      const double ph2 = rng.uniform(0.2, 2.9);
      seg.ax = l.cx + l.rx * u1 * std::sin(ph1) * std::cos(th1);
      seg.ay = l.cy + l.ry * u1 * std::sin(ph1) * std::sin(th1);
      seg.az = l.cz + l.rz * u1 * std::cos(ph1);
      seg.bx = l.cx + l.rx * u2 * std::sin(ph2) * std::cos(th2);
      seg.by = l.cy + l.ry * u2 * std::sin(ph2) * std::sin(th2);
      seg.bz = l.cz + l.rz * u2 * std::cos(ph2);
      seg.radius = rng.uniform(0.8, 1.5);
      scene.vessels.push_back(seg);
    }
  }
  return scene;
}

HealthyPhantom render_healthy(const PhantomSpec& spec, const PhantomScene& scene,
                              const ValueNoise& noise) {
  const int n = spec.size;
  HealthyPhantom out;
  out.volume.grid.dims = {n, n, n};
  out.volume.grid.spacing = {1, 1, 1};
  out.volume.grid.origin = {0, 0, 0};
  out.volume.data.resize(out.volume.grid.voxel_count());
  out.lung.grid = out.volume.grid;
  out.lung.data.assign(out.volume.grid.voxel_count(), 0);

  const double lung_mid = 0.5 * (spec.lung_hu_lo + spec.lung_hu_hi);
  const double lung_amp = 0.5 * (spec.lung_hu_hi - spec.lung_hu_lo);
  const double body_mid = 0.5 * (spec.body_hu_lo + spec.body_hu_hi);
  const double body_amp = 0.5 * (spec.body_hu_hi - spec.body_hu_lo);

  size_t idx = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x, ++idx) {
        const double px = x + 0.5, py = y + 0.5, pz = z + 0.5;
        double hu = -1000.0;  // air
        if (scene.body.contains(px, py, pz)) {
          hu = body_mid + body_amp * noise.at(px, py, pz);
          for (int i = 0; i < 2; ++i) {
            if (!scene.lungs[i].contains(px, py, pz)) continue;
            hu = lung_mid + lung_amp * noise.at(px, py, pz);
            out.lung.data[idx] = 1;
            for (const auto& seg : scene.vessels)
              if (seg.dist(px, py, pz) <= seg.radius) {
                hu = spec.vessel_hu;
                break;
              }
            break;
          }
        }
        out.volume.data[idx] = static_cast<float>(hu);
      }
  return out;
}

}  // namespace

HealthyPhantom gen_healthy(const PhantomSpec& spec) {
  spec.validate();
  Rng scene_rng(Rng::derive(spec.seed, 11));
  Rng noise_rng(Rng::derive(spec.seed, 12));
  const PhantomScene scene = make_scene(spec, scene_rng);
  const ValueNoise noise(spec.size, std::max(4, spec.size / 8), noise_rng);
  return render_healthy(spec, scene, noise);
}

InfectedPhantom gen_infected(const PhantomSpec& spec) {
  spec.validate();
  Rng scene_rng(Rng::derive(spec.seed, 11));
  Rng noise_rng(Rng::derive(spec.seed, 12));
  Rng lesion_rng(Rng::derive(spec.seed, 13));
  const PhantomScene scene = make_scene(spec, scene_rng);
  const ValueNoise noise(spec.size, std::max(4, spec.size / 8), noise_rng);
  HealthyPhantom healthy = render_healthy(spec, scene, noise);

  InfectedPhantom out;
  out.paired_healthy = healthy.volume;
  out.lung = healthy.lung;
  out.volume = healthy.volume;
  out.lesions.grid = healthy.lung.grid;
  out.lesions.data.assign(healthy.lung.data.size(), 0);

  const int want = spec.lesion_count_min +
                   static_cast<int>(lesion_rng.integer(
                       static_cast<uint64_t>(spec.lesion_count_max - spec.lesion_count_min) + 1));
  if (want == 0) return out;

  // lesions of one volume share a base intensity so their residuals cluster
  const double margin = std::min(40.0, 0.5 * (spec.lesion_hu_hi - spec.lesion_hu_lo));
  const double base_hu = lesion_rng.uniform(spec.lesion_hu_lo + margin, spec.lesion_hu_hi - margin);

  std::vector<Lesion> placed;
  const int n = spec.size;
  for (int li = 0; li < want; ++li) {
    bool ok = false;
    for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
      Lesion les;
      const auto& lung = scene.lungs[lesion_rng.integer(2)];
      les.rx = lesion_rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
      les.ry = lesion_rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
      les.rz = lesion_rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
      les.exponent = lesion_rng.uniform(2.0, 3.0);
      les.hu = std::clamp(base_hu + lesion_rng.uniform(-margin, margin), spec.lesion_hu_lo,
                          spec.lesion_hu_hi);
      les.cx = lung.cx + lung.rx * lesion_rng.uniform(-0.6, 0.6);
      les.cy = lung.cy + lung.ry * lesion_rng.uniform(-0.6, 0.6);
      les.cz = lung.cz + lung.rz * lesion_rng.uniform(-0.6, 0.6);

      // the soft edge must stay inside the lung mask
      const int x0 = std::max(0, static_cast<int>(les.cx - kLesionEdge * les.rx) - 1);
      const int x1 = std::min(n - 1, static_cast<int>(les.cx + kLesionEdge * les.rx) + 1);
      const int y0 = std::max(0, static_cast<int>(les.cy - kLesionEdge * les.ry) - 1);
      const int y1 = std::min(n - 1, static_cast<int>(les.cy + kLesionEdge * les.ry) + 1);
      const int z0 = std::max(0, static_cast<int>(les.cz - kLesionEdge * les.rz) - 1);
      const int z1 = std::min(n - 1, static_cast<int>(les.cz + kLesionEdge * les.rz) + 1);
      bool inside = true;
      for (int z = z0; z <= z1 && inside; ++z)
        for (int y = y0; y <= y1 && inside; ++y)
          for (int x = x0; x <= x1; ++x) {
            if (les.rho(x + 0.5, y + 0.5, z + 0.5) < kLesionEdge &&
                !out.lung.at(x, y, z)) {
              inside = false;
              break;
            }
          }
      if (!inside) continue;

      placed.push_back(les);
      for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5, py = y + 0.5, pz = z + 0.5;
            const double rho = les.rho(px, py, pz);
            const double w = lesion_weight(rho);
            if (w <= 0.0) continue;
            const size_t i = out.volume.index(x, y, z);
            const double lesion_hu = les.hu + 0.4 * spec.noise_hu * noise.at(px, py, pz);
            out.volume.data[i] = static_cast<float>(
                w * lesion_hu + (1.0 - w) * out.volume.data[i]);
            if (rho <= 1.0) out.lesions.data[i] = 1;
          }
      ok = true;
    }
    if (!ok) out.placement_shortfall = true;
  }
  return out;
}

namespace {

std::vector<SliceImage> phantom_slices(const CtVolume& vol, const BinaryMask& lung,
                                       int crop_side, const std::string& id) {
  const CtVolume norm = window_normalize(vol);
  const CtVolume masked = apply_mask_zero_background(norm, lung);
  return extract_slices(masked, lung, crop_side, id);
}

}  // namespace

DatasetSummary gen_dataset(const PhantomSpec& spec, int n_train_healthy,
                           int n_train_infected, int n_test, const std::string& out_dir,
                           int crop_side) {
  spec.validate();
  if (n_train_healthy < 1 || n_train_infected < 1 || n_test < 1)
    throw std::invalid_argument("gen_dataset: counts must be >= 1");
  if (crop_side == 0) crop_side = spec.size;

  const fs::path root(out_dir);
  const fs::path slice_dir = root / "train" / "slices";
  const fs::path test_dir = root / "test";
  fs::create_directories(slice_dir);
  fs::create_directories(test_dir);

  DatasetSummary summary;
  std::vector<ManifestEntry> manifest;

  auto add_slices = [&](const std::vector<SliceImage>& slices, SliceLabel label) {
    for (const auto& s : slices) {
      SliceImage tagged = s;
      tagged.label = label;
      char name[128];
      std::snprintf(name, sizeof(name), "%s_z%03d.slc", tagged.volume_id.c_str(),
                    tagged.slice_index);
      write_slice((slice_dir / name).string(), tagged);
      manifest.push_back({std::string("slices/") + name, tagged.slice_index, label});
    }
  };

  uint64_t stream = 0;
  for (int i = 0; i < n_train_healthy; ++i) {
    PhantomSpec s = spec;
    s.seed = Rng::derive(spec.seed, 100 + stream++);
    const HealthyPhantom hp = gen_healthy(s);
    char id[32];
    std::snprintf(id, sizeof(id), "train_h_%03d", i);
    const auto slices = phantom_slices(hp.volume, hp.lung, crop_side, id);
    summary.n_healthy_slices += static_cast<int>(slices.size());
    add_slices(slices, SliceLabel::healthy);
  }
  for (int i = 0; i < n_train_infected; ++i) {
    PhantomSpec s = spec;
    s.seed = Rng::derive(spec.seed, 100 + stream++);
    const InfectedPhantom ip = gen_infected(s);
    char id[32];
    std::snprintf(id, sizeof(id), "train_i_%03d", i);
    const auto slices = phantom_slices(ip.volume, ip.lung, crop_side, id);
    summary.n_infected_slices += static_cast<int>(slices.size());
    add_slices(slices, SliceLabel::infected);
  }

  const std::string train_manifest = (root / "train" / "manifest.json").string();
  write_manifest(train_manifest, manifest);
  summary.train_manifest = train_manifest;

  json test_manifest = json::array();
  for (int i = 0; i < n_test; ++i) {
    PhantomSpec s = spec;
    s.seed = Rng::derive(spec.seed, 100 + stream++);
    const InfectedPhantom ip = gen_infected(s);
    char id[32];
    std::snprintf(id, sizeof(id), "test_%03d", i);
    const fs::path case_dir = test_dir / id;
    fs::create_directories(case_dir);
    write_volume((case_dir / "infected.vol").string(), ip.volume);
    write_mask((case_dir / "lung.msk").string(), ip.lung);
    write_mask((case_dir / "lesion_gt.msk").string(), ip.lesions);
    write_volume((case_dir / "healthy_oracle.vol").string(), ip.paired_healthy);
    test_manifest.push_back({{"id", id},
                             {"infected", std::string(id) + "/infected.vol"},
                             {"lung", std::string(id) + "/lung.msk"},
                             {"lesion_gt", std::string(id) + "/lesion_gt.msk"},
                             {"healthy_oracle", std::string(id) + "/healthy_oracle.vol"}});
  }
  const std::string test_manifest_path = (test_dir / "manifest.json").string();
  std::ofstream tf(test_manifest_path);
  if (!tf) throw std::runtime_error("cannot open for write: " + test_manifest_path);
  tf << test_manifest.dump(2) << "\n";
  summary.test_manifest = test_manifest_path;
  summary.n_test_cases = n_test;
  return summary;
}

std::vector<TestCasePaths> read_test_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  json j;
  f >> j;
  if (!j.is_array()) throw std::runtime_error(path + ": test manifest must be an array");
  const fs::path dir = fs::path(path).parent_path();
  std::vector<TestCasePaths> out;
  for (const auto& e : j) {
    TestCasePaths c;
    c.id = e.at("id").get<std::string>();
    c.infected = (dir / e.at("infected").get<std::string>()).string();
    c.lung = (dir / e.at("lung").get<std::string>()).string();
    c.lesion_gt = (dir / e.at("lesion_gt").get<std::string>()).string();
    c.healthy_oracle = (dir / e.at("healthy_oracle").get<std::string>()).string();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace ctseg
