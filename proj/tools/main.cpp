// ctseg: unsupervised CT lesion segmentation toolkit.
//
// Subcommands cover the full pipeline: phantom data generation, CT
// preprocessing, cycle-consistent translation training, subtraction-based
// segmentation, and volumetric/regional evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctseg/config.hpp"
#include "ctseg/cyclegan.hpp"
#include "ctseg/imgvol.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/pipeline.hpp"
#include "ctseg/png_io.hpp"
#include "ctseg/postproc.hpp"

namespace fs = std::filesystem;
using namespace ctseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

RunConfig load_config(const std::string& path, uint64_t* seed_override) {
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
  if (seed_override) {
    cfg.seed = *seed_override;
    cfg.train.seed = *seed_override;
    cfg.phantom.seed = *seed_override;
    cfg.postproc.seed = *seed_override;
  }
  cfg.validate();
  return cfg;
}

void write_config_echo(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "config_echo.json");
  if (!f) throw std::runtime_error("cannot write config echo in " + out_dir);
  f << cfg.to_json() << "\n";
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << text;
}

int cmd_phantom(const RunConfig& cfg, const std::string& out_dir) {
  write_config_echo(cfg, out_dir);
  const DatasetSummary s =
      gen_dataset(cfg.phantom, cfg.phantom_dataset.train_healthy,
                  cfg.phantom_dataset.train_infected, cfg.phantom_dataset.test, out_dir,
                  cfg.imgvol.crop_side <= cfg.phantom.size ? cfg.imgvol.crop_side
                                                           : cfg.phantom.size);
  std::printf("phantom dataset written to %s\n", out_dir.c_str());
  std::printf("  healthy slices:  %d\n", s.n_healthy_slices);
  std::printf("  infected slices: %d\n", s.n_infected_slices);
  std::printf("  test cases:      %d\n", s.n_test_cases);
  std::printf("  train manifest:  %s\n", s.train_manifest.c_str());
  std::printf("  test manifest:   %s\n", s.test_manifest.c_str());
  return kExitOk;
}

int cmd_preprocess(const RunConfig& cfg, const std::vector<std::string>& volumes,
                   const std::vector<std::string>& masks, const std::string& label,
                   const std::string& out_dir) {
  if (volumes.size() != masks.size())
    throw std::invalid_argument("preprocess: need one --mask per --volume");
  write_config_echo(cfg, out_dir);
  const fs::path slice_dir = fs::path(out_dir) / "slices";
  fs::create_directories(slice_dir);
  const SliceLabel lab = slice_label_from_string(label);

  std::vector<ManifestEntry> manifest;
  int total = 0;
  for (size_t i = 0; i < volumes.size(); ++i) {
    CtVolume vol = read_volume(volumes[i]);
    BinaryMask mask = read_mask(masks[i]);
    vol = resample_isotropic(vol, cfg.imgvol.resample_mm);
    mask = resample_mask_isotropic(mask, cfg.imgvol.resample_mm);
    const CtVolume norm = window_normalize(vol, cfg.imgvol.window_lo, cfg.imgvol.window_hi);
    const CtVolume masked = apply_mask_zero_background(norm, mask);
    const std::string id = fs::path(volumes[i]).stem().string();
    const auto slices = extract_slices(masked, mask, cfg.imgvol.crop_side, id);
    for (const auto& s : slices) {
      SliceImage tagged = s;
      tagged.label = lab;
      char name[160];
      std::snprintf(name, sizeof(name), "%s_z%03d.slc", id.c_str(), s.slice_index);
      write_slice((slice_dir / name).string(), tagged);
      manifest.push_back({std::string("slices/") + name, s.slice_index, lab});
      ++total;
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
  std::printf("preprocessed %zu volume(s), %d slice(s) -> %s\n", volumes.size(), total,
              out_dir.c_str());
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest_path,
              const std::string& out_dir, const std::string& resume) {
  write_config_echo(cfg, out_dir);
  const auto slices = load_manifest_slices(manifest_path);
  std::vector<SliceImage> pool_x, pool_y;
  for (auto& s : slices) {
    if (s.label == SliceLabel::infected) pool_x.push_back(s);
    else if (s.label == SliceLabel::healthy) pool_y.push_back(s);
  }
  std::printf("training pools: %zu infected, %zu healthy\n", pool_x.size(), pool_y.size());
  const TrainReport rep = train(pool_x, pool_y, cfg.generator, cfg.discriminator, cfg.train,
                                cfg.weights, out_dir, resume);
  std::printf("trained %d epoch(s), %lld iteration(s)\n", rep.epochs_run,
              static_cast<long long>(rep.iterations));
  std::printf("  loss curves: %s\n", rep.loss_csv.c_str());
  std::printf("  checkpoint:  %s\n", rep.last_checkpoint.c_str());
  return kExitOk;
}

int cmd_segment(const RunConfig& cfg, const std::string& checkpoint,
                const std::string& test_manifest, const std::string& volume,
                const std::string& lung, const std::string& out_dir, bool overlays) {
  write_config_echo(cfg, out_dir);
  const LoadedModel model = load_checkpoint_networks(checkpoint);
  const int side = model.gcfg.input_side;

  struct Case {
    std::string id, infected, lung;
  };
  std::vector<Case> cases;
  if (!test_manifest.empty()) {
    for (const auto& t : read_test_manifest(test_manifest))
      cases.push_back({t.id, t.infected, t.lung});
  }
  if (!volume.empty()) {
    if (lung.empty()) throw std::invalid_argument("segment: --lung required with --volume");
    cases.push_back({fs::path(volume).stem().string(), volume, lung});
  }
  if (cases.empty())
    throw std::invalid_argument("segment: provide --test-manifest or --volume/--lung");

  nlohmann::json meta;
  meta["method"] = to_string(cfg.postproc.method);
  meta["checkpoint"] = checkpoint;
  meta["cases"] = nlohmann::json::array();

  for (const auto& c : cases) {
    const CtVolume vol = read_volume(c.infected);
    const BinaryMask lung_mask = read_mask(c.lung);
    const SegmentResult res = segment_volume(model.g_xy, vol, lung_mask, cfg.postproc, side,
                                             cfg.imgvol.window_lo, cfg.imgvol.window_hi);
    const fs::path case_dir = fs::path(out_dir) / c.id;
    fs::create_directories(case_dir);
    write_mask((case_dir / "pred.msk").string(), res.pred);
    meta["cases"].push_back({{"id", c.id},
                             {"pred", c.id + "/pred.msk"},
                             {"slices", res.slices_processed},
                             {"degenerate_slices", res.degenerate_slices}});
    if (overlays) {
      const CtVolume norm = window_normalize(vol, cfg.imgvol.window_lo, cfg.imgvol.window_hi);
      const CtVolume masked = apply_mask_zero_background(norm, lung_mask);
      const auto slices = extract_slices(masked, lung_mask, side, c.id);
      for (const auto& s : slices) {
        const Mask2D pred2d = mask_slice_window(res.pred, s);
        const Mask2D empty = Mask2D::zeros(s.height, s.width);
        char name[64];
        std::snprintf(name, sizeof(name), "overlay_z%03d.png", s.slice_index);
        write_overlay_png((case_dir / name).string(), s, pred2d, empty);
      }
    }
    std::printf("segmented %s: %d slice(s), %d degenerate\n", c.id.c_str(),
                res.slices_processed, res.degenerate_slices);
  }
  write_text((fs::path(out_dir) / "segment_meta.json").string(), meta.dump(2) + "\n");
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& test_manifest,
                 const std::string& pred_dir, std::vector<std::string> preds,
                 std::vector<std::string> gts, const std::string& out_dir) {
  write_config_echo(cfg, out_dir);
  std::vector<std::string> ids;
  if (!test_manifest.empty()) {
    if (pred_dir.empty())
      throw std::invalid_argument("evaluate: --pred-dir required with --test-manifest");
    for (const auto& t : read_test_manifest(test_manifest)) {
      ids.push_back(t.id);
      preds.push_back((fs::path(pred_dir) / t.id / "pred.msk").string());
      gts.push_back(t.lesion_gt);
    }
  }
  if (preds.size() != gts.size() || preds.empty())
    throw std::invalid_argument("evaluate: need matching --pred/--gt lists or a manifest");
  while (ids.size() < preds.size())
    ids.push_back("case_" + std::to_string(ids.size()));

  std::vector<CohortCase> cases;
  for (size_t i = 0; i < preds.size(); ++i) {
    const BinaryMask p = read_mask(preds[i]);
    const BinaryMask g = read_mask(gts[i]);
    cases.push_back({ids[i], overlap_metrics(p, g)});
  }
  const CohortSummary summary = evaluate_cohort(cases);
  const std::string csv = cohort_csv(summary);
  write_text((fs::path(out_dir) / "metrics.csv").string(), csv);
  write_text((fs::path(out_dir) / "metrics.json").string(), cohort_json(summary) + "\n");
  std::fputs(csv.c_str(), stdout);
  return kExitOk;
}

int cmd_regions(const RunConfig& cfg, const std::string& test_manifest,
                const std::string& pred_dir, std::vector<std::string> preds,
                std::vector<std::string> gts, std::vector<std::string> lungs,
                const std::string& out_dir) {
  write_config_echo(cfg, out_dir);
  if (!test_manifest.empty()) {
    if (pred_dir.empty())
      throw std::invalid_argument("regions: --pred-dir required with --test-manifest");
    for (const auto& t : read_test_manifest(test_manifest)) {
      preds.push_back((fs::path(pred_dir) / t.id / "pred.msk").string());
      gts.push_back(t.lesion_gt);
      lungs.push_back(t.lung);
    }
  }
  if (preds.size() != gts.size() || preds.size() != lungs.size() || preds.empty())
    throw std::invalid_argument("regions: need matching --pred/--gt/--lung lists or a manifest");

  std::vector<RegionDiagnosis> per_patient;
  for (size_t i = 0; i < preds.size(); ++i) {
    const BinaryMask p = read_mask(preds[i]);
    const BinaryMask g = read_mask(gts[i]);
    const BinaryMask l = read_mask(lungs[i]);
    const RegionLabels regions = divide_regions(l, cfg.metrics.region_splits);
    per_patient.push_back(region_diagnosis(p, g, regions, cfg.metrics.min_voxels));
  }
  const RegionDiagnosis agg = aggregate_region_diagnosis(per_patient);
  const std::string csv = region_report_csv(agg, per_patient);
  write_text((fs::path(out_dir) / "regions.csv").string(), csv);
  write_text((fs::path(out_dir) / "regions.json").string(),
             region_report_json(agg, per_patient) + "\n");
  std::fputs(csv.c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised CT lesion segmentation via cycle-consistent translation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });

  auto* sc_phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");

  auto* sc_pre = app.add_subcommand("preprocess", "resample, window, mask and slice volumes");
  std::vector<std::string> volumes, masks;
  std::string label = "unknown";
  sc_pre->add_option("--volume", volumes, "input volume (repeatable)")->required();
  sc_pre->add_option("--mask", masks, "lung mask per volume (repeatable)")->required();
  sc_pre->add_option("--label", label, "slice label: healthy|infected|unknown");

  auto* sc_train = app.add_subcommand("train", "train the translation networks");
  std::string manifest, resume;
  sc_train->add_option("--manifest", manifest, "training slice manifest")->required();
  sc_train->add_option("--resume", resume, "checkpoint directory to resume from");

  auto* sc_seg = app.add_subcommand("segment", "segment lesions with a trained checkpoint");
  std::string checkpoint, test_manifest, volume, lung, method;
  bool overlays = false;
  sc_seg->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  sc_seg->add_option("--test-manifest", test_manifest, "phantom test manifest");
  sc_seg->add_option("--volume", volume, "single infected volume");
  sc_seg->add_option("--lung", lung, "lung mask for --volume");
  sc_seg->add_option("--method", method, "binarization: kmeans|otsu");
  sc_seg->add_flag("--overlays", overlays, "write contour overlay PNGs");

  auto* sc_eval = app.add_subcommand("evaluate", "volumetric overlap metrics");
  std::string eval_manifest, pred_dir;
  std::vector<std::string> preds, gts, lungs;
  sc_eval->add_option("--test-manifest", eval_manifest, "phantom test manifest");
  sc_eval->add_option("--pred-dir", pred_dir, "directory of segment outputs");
  sc_eval->add_option("--pred", preds, "predicted mask (repeatable)");
  sc_eval->add_option("--gt", gts, "ground-truth mask (repeatable)");

  auto* sc_reg = app.add_subcommand("regions", "12-region lesion diagnosis report");
  std::string reg_manifest, reg_pred_dir;
  std::vector<std::string> rpreds, rgts, rlungs;
  sc_reg->add_option("--test-manifest", reg_manifest, "phantom test manifest");
  sc_reg->add_option("--pred-dir", reg_pred_dir, "directory of segment outputs");
  sc_reg->add_option("--pred", rpreds, "predicted mask (repeatable)");
  sc_reg->add_option("--gt", rgts, "ground-truth mask (repeatable)");
  sc_reg->add_option("--lung", rlungs, "lung mask (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path, seed_set ? &seed : nullptr);
    if (!method.empty()) cfg.postproc.method = binarize_method_from_string(method);

    if (sc_phantom->parsed()) return cmd_phantom(cfg, out_dir);
    if (sc_pre->parsed()) return cmd_preprocess(cfg, volumes, masks, label, out_dir);
    if (sc_train->parsed()) return cmd_train(cfg, manifest, out_dir, resume);
    if (sc_seg->parsed())
      return cmd_segment(cfg, checkpoint, test_manifest, volume, lung, out_dir, overlays);
    if (sc_eval->parsed())
      return cmd_evaluate(cfg, eval_manifest, pred_dir, preds, gts, out_dir);
    if (sc_reg->parsed())
      return cmd_regions(cfg, reg_manifest, reg_pred_dir, rpreds, rgts, rlungs, out_dir);
    std::fprintf(stderr, "no subcommand\n");
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
