#include "ctseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace ctseg {

OverlapReport overlap_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  if (!pred.grid.same_grid(gt.grid))
    throw std::invalid_argument("overlap_metrics: grids differ");
  OverlapReport r;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    r.n_pred += pred.data[i];
    r.n_gt += gt.data[i];
    r.n_inter += pred.data[i] & gt.data[i];
  }
  if (r.n_pred == 0 && r.n_gt == 0) {
    r.dsc = r.psc = r.sen = 100.0;
    return r;
  }
  r.dsc = 200.0 * static_cast<double>(r.n_inter) / static_cast<double>(r.n_pred + r.n_gt);
  if (r.n_pred == 0) {
    r.psc = 0.0;
    r.psc_defined = false;
  } else {
    r.psc = 100.0 * static_cast<double>(r.n_inter) / static_cast<double>(r.n_pred);
  }
  if (r.n_gt == 0) {
    r.sen = 0.0;
    r.sen_defined = false;
  } else {
    r.sen = 100.0 * static_cast<double>(r.n_inter) / static_cast<double>(r.n_gt);
  }
  return r;
}

double dsc(const BinaryMask& pred, const BinaryMask& gt) { return overlap_metrics(pred, gt).dsc; }
double psc(const BinaryMask& pred, const BinaryMask& gt) { return overlap_metrics(pred, gt).psc; }
double sen(const BinaryMask& pred, const BinaryMask& gt) { return overlap_metrics(pred, gt).sen; }

RegionLabels divide_regions(const BinaryMask& lung, std::array<int, 3> splits) {
  for (int s : splits)
    if (s < 1) throw std::invalid_argument("divide_regions: splits must be >= 1");
  const auto box = mask_bounding_box(lung);
  if (!box) throw std::invalid_argument("divide_regions: empty lung mask");

  RegionLabels out;
  out.grid = lung.grid;
  out.label.assign(lung.data.size(), 0);
  out.n_regions = splits[0] * splits[1] * splits[2];
  if (out.n_regions > 255) throw std::invalid_argument("divide_regions: too many regions");

  // band index via integer boundaries floor(extent * i / n)
  auto band_of = [](int v, int lo, int extent, int n) {
    const int64_t off = v - lo;
    int b = static_cast<int>((off * n) / extent);
    return std::min(b, n - 1);
  };

  const std::array<int, 3> extent{box->hi[0] - box->lo[0] + 1, box->hi[1] - box->lo[1] + 1,
                                  box->hi[2] - box->lo[2] + 1};
  const auto& d = lung.grid.dims;
  size_t idx = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x, ++idx) {
        if (!lung.data[idx]) continue;
        const int bx = band_of(x, box->lo[0], extent[0], splits[0]);
        const int by = band_of(y, box->lo[1], extent[1], splits[1]);
        const int bz = band_of(z, box->lo[2], extent[2], splits[2]);
        out.label[idx] = static_cast<uint8_t>(1 + (bz * splits[1] + by) * splits[0] + bx);
      }
  return out;
}

RegionDiagnosis region_diagnosis(const BinaryMask& pred, const BinaryMask& gt,
                                 const RegionLabels& regions, int min_voxels) {
  if (!pred.grid.same_grid(gt.grid) || !pred.grid.same_grid(regions.grid))
    throw std::invalid_argument("region_diagnosis: grids differ");
  if (min_voxels < 1) throw std::invalid_argument("region_diagnosis: min_voxels must be >= 1");

  std::vector<int64_t> pred_counts(regions.n_regions + 1, 0), gt_counts(regions.n_regions + 1, 0);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const int r = regions.label[i];
    if (r == 0) continue;
    pred_counts[r] += pred.data[i];
    gt_counts[r] += gt.data[i];
  }

  RegionDiagnosis d;
  d.pred_pos.resize(regions.n_regions);
  d.gt_pos.resize(regions.n_regions);
  for (int r = 1; r <= regions.n_regions; ++r) {
    const bool p = pred_counts[r] >= min_voxels;
    const bool g = gt_counts[r] >= min_voxels;
    d.pred_pos[r - 1] = p;
    d.gt_pos[r - 1] = g;
    if (p && g) ++d.tp;
    else if (p && !g) ++d.fp;
    else if (!p && g) ++d.fn;
    else ++d.tn;
  }
  d.accuracy = static_cast<double>(d.tp + d.tn) / static_cast<double>(regions.n_regions);
  if (d.tp + d.fp == 0) {
    // no positive calls at all: undefined, reported as perfect and flagged
    d.precision = 1.0;
    d.precision_defined = false;
  } else {
    d.precision = static_cast<double>(d.tp) / static_cast<double>(d.tp + d.fp);
  }
  if (d.tp + d.fn == 0) {
    d.sensitivity = 1.0;
    d.sensitivity_defined = false;
  } else {
    d.sensitivity = static_cast<double>(d.tp) / static_cast<double>(d.tp + d.fn);
  }
  return d;
}

RegionDiagnosis aggregate_region_diagnosis(const std::vector<RegionDiagnosis>& per_patient) {
  if (per_patient.empty())
    throw std::invalid_argument("aggregate_region_diagnosis: no patients");
  RegionDiagnosis agg;
  int regions_total = 0;
  for (const auto& d : per_patient) {
    agg.tp += d.tp;
    agg.fp += d.fp;
    agg.tn += d.tn;
    agg.fn += d.fn;
    regions_total += static_cast<int>(d.pred_pos.size());
  }
  agg.accuracy = static_cast<double>(agg.tp + agg.tn) / static_cast<double>(regions_total);
  if (agg.tp + agg.fp == 0) {
    agg.precision = 1.0;
    agg.precision_defined = false;
  } else {
    agg.precision = static_cast<double>(agg.tp) / static_cast<double>(agg.tp + agg.fp);
  }
  if (agg.tp + agg.fn == 0) {
    agg.sensitivity = 1.0;
    agg.sensitivity_defined = false;
  } else {
    agg.sensitivity = static_cast<double>(agg.tp) / static_cast<double>(agg.tp + agg.fn);
  }
  return agg;
}

namespace {

struct MeanSd {
  double mean = 0, sd = 0;
};

// population SD (divisor n)
MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  for (double x : xs) r.sd += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(r.sd / static_cast<double>(xs.size()));
  return r;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

CohortSummary evaluate_cohort(const std::vector<CohortCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("evaluate_cohort: at least one case required");
  CohortSummary s;
  s.cases = cases;
  std::vector<double> d, p, n;
  for (const auto& c : cases) {
    d.push_back(c.overlap.dsc);
    p.push_back(c.overlap.psc);
    n.push_back(c.overlap.sen);
  }
  const auto md = mean_sd(d), mp = mean_sd(p), mn = mean_sd(n);
  s.dsc_mean = md.mean;
  s.dsc_sd = md.sd;
  s.psc_mean = mp.mean;
  s.psc_sd = mp.sd;
  s.sen_mean = mn.mean;
  s.sen_sd = mn.sd;
  return s;
}

std::string cohort_csv(const CohortSummary& s) {
  std::string out = "case,DSC(%),PSC(%),SEN(%)\n";
  for (const auto& c : s.cases) {
    out += c.id + "," + fmt(c.overlap.dsc) + "," + fmt(c.overlap.psc) + "," +
           fmt(c.overlap.sen);
    if (!c.overlap.psc_defined || !c.overlap.sen_defined) out += ",undefined-flagged";
    out += "\n";
  }
  out += "mean±SD," + fmt(s.dsc_mean) + "±" + fmt(s.dsc_sd) + "," + fmt(s.psc_mean) + "±" +
         fmt(s.psc_sd) + "," + fmt(s.sen_mean) + "±" + fmt(s.sen_sd) + "\n";
  return out;
}

std::string cohort_json(const CohortSummary& s) {
  json cases = json::array();
  for (const auto& c : s.cases) {
    cases.push_back({{"case", c.id},
                     {"dsc", c.overlap.dsc},
                     {"psc", c.overlap.psc},
                     {"sen", c.overlap.sen},
                     {"voxels_pred", c.overlap.n_pred},
                     {"voxels_gt", c.overlap.n_gt},
                     {"voxels_intersection", c.overlap.n_inter},
                     {"psc_defined", c.overlap.psc_defined},
                     {"sen_defined", c.overlap.sen_defined}});
  }
  json j{{"cases", cases},
         {"summary",
          {{"dsc_mean", s.dsc_mean},
           {"dsc_sd", s.dsc_sd},
           {"psc_mean", s.psc_mean},
           {"psc_sd", s.psc_sd},
           {"sen_mean", s.sen_mean},
           {"sen_sd", s.sen_sd}}}};
  return j.dump(2);
}

namespace {

json diagnosis_to_json(const RegionDiagnosis& d) {
  // fraction and percent forms both reported
  return json{{"tp", d.tp},
              {"fp", d.fp},
              {"tn", d.tn},
              {"fn", d.fn},
              {"accuracy", d.accuracy},
              {"precision", d.precision},
              {"sensitivity", d.sensitivity},
              {"accuracy_percent", 100.0 * d.accuracy},
              {"precision_percent", 100.0 * d.precision},
              {"sensitivity_percent", 100.0 * d.sensitivity},
              {"precision_defined", d.precision_defined},
              {"sensitivity_defined", d.sensitivity_defined}};
}

}  // namespace

std::string region_report_json(const RegionDiagnosis& agg,
                               const std::vector<RegionDiagnosis>& per_patient) {
  json patients = json::array();
  for (const auto& d : per_patient) patients.push_back(diagnosis_to_json(d));
  json j{{"aggregate", diagnosis_to_json(agg)}, {"patients", patients}};
  return j.dump(2);
}

std::string region_report_csv(const RegionDiagnosis& agg,
                              const std::vector<RegionDiagnosis>& per_patient) {
  std::string out = "patient,TP,FP,TN,FN,ACC,PSC,SEN\n";
  for (size_t i = 0; i < per_patient.size(); ++i) {
    const auto& d = per_patient[i];
    out += std::to_string(i) + "," + std::to_string(d.tp) + "," + std::to_string(d.fp) + "," +
           std::to_string(d.tn) + "," + std::to_string(d.fn) + "," + fmt(d.accuracy) + "," +
           fmt(d.precision) + "," + fmt(d.sensitivity) + "\n";
  }
  out += "aggregate," + std::to_string(agg.tp) + "," + std::to_string(agg.fp) + "," +
         std::to_string(agg.tn) + "," + std::to_string(agg.fn) + "," + fmt(agg.accuracy) + "," +
         fmt(agg.precision) + "," + fmt(agg.sensitivity) + "\n";
  return out;
}

}  // namespace ctseg
