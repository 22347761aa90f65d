#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctseg/imgvol.hpp"

namespace ctseg {

// Voxel-overlap metrics in percent. When both masks are empty all three are
// 100 by convention; an undefined ratio (empty pred or gt against a non-empty
// counterpart) is reported as 0 and flagged.
struct OverlapReport {
  double dsc = 0, psc = 0, sen = 0;  // percent
  uint64_t n_pred = 0, n_gt = 0, n_inter = 0;
  bool psc_defined = true;
  bool sen_defined = true;
};

OverlapReport overlap_metrics(const BinaryMask& pred, const BinaryMask& gt);

double dsc(const BinaryMask& pred, const BinaryMask& gt);
double psc(const BinaryMask& pred, const BinaryMask& gt);
double sen(const BinaryMask& pred, const BinaryMask& gt);

// Lung bounding box split into splits[2] superior-inferior bands x
// splits[1] anterior-posterior x splits[0] left-right boxes (default 3x2x2
// = 12). Lung voxels carry labels 1..n_regions, non-lung voxels 0.
struct RegionLabels {
  GridMeta grid;
  std::vector<uint8_t> label;
  int n_regions = 0;
};

RegionLabels divide_regions(const BinaryMask& lung, std::array<int, 3> splits = {2, 2, 3});

// Per-patient region call: a region is positive when it holds >= min_voxels
// lesion voxels.
struct RegionDiagnosis {
  std::vector<bool> pred_pos, gt_pos;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0;     // (TP+TN)/regions
  double precision = 0;    // TP/(TP+FP)
  double sensitivity = 0;  // TP/(TP+FN)
  bool precision_defined = true;
  bool sensitivity_defined = true;
};

RegionDiagnosis region_diagnosis(const BinaryMask& pred, const BinaryMask& gt,
                                 const RegionLabels& regions, int min_voxels = 1);

// Confusion counts pooled over patients.
RegionDiagnosis aggregate_region_diagnosis(const std::vector<RegionDiagnosis>& per_patient);

struct CohortCase {
  std::string id;
  OverlapReport overlap;
};

struct CohortSummary {
  std::vector<CohortCase> cases;
  double dsc_mean = 0, dsc_sd = 0;
  double psc_mean = 0, psc_sd = 0;
  double sen_mean = 0, sen_sd = 0;
};

// Per-case metrics plus mean +/- population SD.
CohortSummary evaluate_cohort(const std::vector<CohortCase>& cases);

// Table-style emission: header "case,DSC(%),PSC(%),SEN(%)", one row per case,
// final "mean±SD" row. JSON mirror carries the same content.
std::string cohort_csv(const CohortSummary& s);
std::string cohort_json(const CohortSummary& s);

std::string region_report_json(const RegionDiagnosis& agg,
                               const std::vector<RegionDiagnosis>& per_patient);
std::string region_report_csv(const RegionDiagnosis& agg,
                              const std::vector<RegionDiagnosis>& per_patient);

}  // namespace ctseg
