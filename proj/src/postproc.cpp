#include "ctseg/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "ctseg/rng.hpp"

namespace ctseg {

size_t Mask2D::count() const {
  size_t n = 0;
  for (uint8_t b : v) n += b;
  return n;
}

BinarizeMethod binarize_method_from_string(const std::string& s) {
  if (s == "kmeans") return BinarizeMethod::kmeans;
  if (s == "otsu") return BinarizeMethod::otsu;
  throw std::invalid_argument("unknown binarize method: " + s);
}

std::string to_string(BinarizeMethod m) {
  return m == BinarizeMethod::kmeans ? "kmeans" : "otsu";
}

void PostprocParams::validate() const {
  if (median_window < 3 || median_window % 2 == 0)
    throw std::invalid_argument("postproc: median window must be odd and >= 3");
  if (!(gaussian_sigma > 0)) throw std::invalid_argument("postproc: sigma must be > 0");
  if (k < 2) throw std::invalid_argument("postproc: k must be >= 2");
  if (restarts < 1) throw std::invalid_argument("postproc: restarts must be >= 1");
}

DifferenceMap subtract(const SliceImage& infected, const SliceImage& synthetic,
                       const Mask2D& lung) {
  if (infected.height != synthetic.height || infected.width != synthetic.width ||
      infected.height != lung.h || infected.width != lung.w)
    throw std::invalid_argument("subtract: shape mismatch");
  DifferenceMap d;
  d.h = infected.height;
  d.w = infected.width;
  d.lung = lung;
  d.v.resize(infected.data.size());
  for (size_t i = 0; i < d.v.size(); ++i) {
    const float r = infected.data[i] - synthetic.data[i];
    d.v[i] = lung.v[i] ? std::max(r, 0.0f) : 0.0f;
  }
  return d;
}

Image2D median_filter(const Image2D& img, int window) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("median_filter: window must be odd and >= 3");
  const int r = window / 2;
  Image2D out;
  out.h = img.h;
  out.w = img.w;
  out.v.resize(img.v.size());
  std::vector<float> buf(static_cast<size_t>(window) * window);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      size_t n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, img.h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, img.w - 1);
          buf[n++] = img.at(xx, yy);
        }
      }
      std::nth_element(buf.begin(), buf.begin() + n / 2, buf.begin() + n);
      out.at(x, y) = buf[n / 2];
    }
  }
  return out;
}

DifferenceMap median_filter(const DifferenceMap& diff, int window) {
  Image2D img{diff.h, diff.w, diff.v};
  Image2D filtered = median_filter(img, window);
  DifferenceMap out;
  out.h = diff.h;
  out.w = diff.w;
  out.lung = diff.lung;
  out.v = std::move(filtered.v);
  // the filter can bleed nonzero values across the lung boundary
  for (size_t i = 0; i < out.v.size(); ++i)
    if (!out.lung.v[i]) out.v[i] = 0.0f;
  return out;
}

namespace {

struct Samples {
  std::vector<float> values;   // in-lung nonzero intensities
  std::vector<size_t> pixels;  // flat index per sample
};

Samples collect_nonzero(const DifferenceMap& diff) {
  Samples s;
  for (size_t i = 0; i < diff.v.size(); ++i)
    if (diff.lung.v[i] && diff.v[i] > 0.0f) {
      s.values.push_back(diff.v[i]);
      s.pixels.push_back(i);
    }
  return s;
}

size_t distinct_count(std::vector<float> vals, size_t stop_at) {
  std::sort(vals.begin(), vals.end());
  size_t distinct = vals.empty() ? 0 : 1;
  for (size_t i = 1; i < vals.size() && distinct < stop_at; ++i)
    if (vals[i] != vals[i - 1]) ++distinct;
  return distinct;
}

struct LloydRun {
  std::vector<double> centroids;  // ascending
  double wcss = std::numeric_limits<double>::infinity();
};

// One Lloyd run from the given initial centers; converges in 1-D.
LloydRun lloyd_1d(const std::vector<float>& vals, std::vector<double> centers) {
  std::sort(centers.begin(), centers.end());
  const int k = static_cast<int>(centers.size());
  std::vector<double> sums(k), means(k);
  std::vector<size_t> counts(k);
  for (int iter = 0; iter < 200; ++iter) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), size_t{0});
    for (float v : vals) {
      int best = 0;
      double bestd = std::abs(v - centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = std::abs(v - centers[c]);
        if (d < bestd) {  // ties keep the lower centroid
          bestd = d;
          best = c;
        }
      }
      sums[best] += v;
      counts[best] += 1;
    }
    bool changed = false;
    for (int c = 0; c < k; ++c) {
      const double next = counts[c] ? sums[c] / static_cast<double>(counts[c]) : centers[c];
      if (next != centers[c]) changed = true;
      means[c] = next;
    }
    centers = means;
    std::sort(centers.begin(), centers.end());
    if (!changed) break;
  }
  LloydRun run;
  run.centroids = centers;
  run.wcss = 0;
  for (float v : vals) {
    double bestd = std::numeric_limits<double>::infinity();
    for (double c : centers) bestd = std::min(bestd, (v - c) * (v - c));
    run.wcss += bestd;
  }
  return run;
}

// k-means++ style init: first center uniform over samples, each next center
// drawn with probability proportional to squared distance to the nearest
// chosen center.
std::vector<double> kmeanspp_init(const std::vector<float>& vals, int k, Rng& rng) {
  std::vector<double> centers;
  centers.push_back(vals[rng.integer(vals.size())]);
  std::vector<double> d2(vals.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0;
    for (size_t i = 0; i < vals.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (vals[i] - c) * (vals[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) {
      centers.push_back(vals[rng.integer(vals.size())]);
      continue;
    }
    double u = rng.uniform() * total;
    size_t pick = vals.size() - 1;
    for (size_t i = 0; i < vals.size(); ++i) {
      u -= d2[i];
      if (u <= 0) {
        pick = i;
        break;
      }
    }
    centers.push_back(vals[pick]);
  }
  return centers;
}

}  // namespace

BinarizeResult kmeans_binarize(const DifferenceMap& diff, int k, int restarts,
                               uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kmeans_binarize: k must be >= 2");
  if (restarts < 1) throw std::invalid_argument("kmeans_binarize: restarts must be >= 1");
  BinarizeResult res;
  res.mask = Mask2D::zeros(diff.h, diff.w);

  const Samples s = collect_nonzero(diff);
  if (distinct_count(s.values, static_cast<size_t>(k)) < static_cast<size_t>(k)) {
    res.degenerate = true;
    return res;
  }

  const auto [mn_it, mx_it] = std::minmax_element(s.values.begin(), s.values.end());
  const double lo = *mn_it, hi = *mx_it;

  LloydRun best;
  double best_boundary = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> init;
    if (r == 0) {
      // deterministic spread over the value range
      for (int c = 0; c < k; ++c)
        init.push_back(lo + (hi - lo) * (k == 1 ? 0.5 : static_cast<double>(c) / (k - 1)));
    } else {
      Rng rng(Rng::derive(seed, static_cast<uint64_t>(r)));
      init = kmeanspp_init(s.values, k, rng);
    }
    LloydRun run = lloyd_1d(s.values, std::move(init));
    const double boundary =
        0.5 * (run.centroids[k - 2] + run.centroids[k - 1]);  // background | lesion
    if (run.wcss < best.wcss ||
        (run.wcss == best.wcss && boundary < best_boundary)) {  // SSE tie -> lower threshold
      best = run;
      best_boundary = boundary;
    }
  }

  res.threshold = best_boundary;
  for (size_t i = 0; i < s.values.size(); ++i) {
    // nearest-centroid assignment; the top cluster is everything closer to the
    // highest centroid, i.e. strictly above the midpoint boundary
    if (s.values[i] > best_boundary) res.mask.v[s.pixels[i]] = 1;
  }
  return res;
}

BinarizeResult otsu_binarize(const DifferenceMap& diff) {
  BinarizeResult res;
  res.mask = Mask2D::zeros(diff.h, diff.w);

  const Samples s = collect_nonzero(diff);
  if (distinct_count(s.values, 2) < 2) {
    res.degenerate = true;
    return res;
  }

  const auto [mn_it, mx_it] = std::minmax_element(s.values.begin(), s.values.end());
  const double lo = *mn_it, hi = *mx_it;
  constexpr int kBins = 256;
  auto bin_of = [&](float v) {
    const int b = static_cast<int>((static_cast<double>(v) - lo) / (hi - lo) * kBins);
    return std::clamp(b, 0, kBins - 1);
  };

  std::vector<int64_t> hist(kBins, 0);
  for (float v : s.values) hist[bin_of(v)]++;

  // maximize inter-class variance w0*w1*(mu0-mu1)^2 over the split bin; all
  // terms are ratios of exact integer sums, so the argmax is reproducible
  const int64_t total = static_cast<int64_t>(s.values.size());
  int64_t sum_all = 0;
  for (int b = 0; b < kBins; ++b) sum_all += hist[b] * b;

  int best_t = -1;
  double best_var = -1.0;
  int64_t w0 = 0, sum0 = 0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[t];
    sum0 += hist[t] * t;
    const int64_t w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = static_cast<double>(sum0) / static_cast<double>(w0);
    const double mu1 = static_cast<double>(sum_all - sum0) / static_cast<double>(w1);
    const double var = static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
    if (var > best_var) {
      best_var = var;
      best_t = t;
    }
  }
  if (best_t < 0) {
    res.degenerate = true;
    return res;
  }

  res.threshold = lo + (hi - lo) * (static_cast<double>(best_t) + 1.0) / kBins;
  for (size_t i = 0; i < s.values.size(); ++i)
    if (bin_of(s.values[i]) > best_t) res.mask.v[s.pixels[i]] = 1;
  return res;
}

Mask2D gaussian_smooth_mask(const Mask2D& mask, int window, double sigma) {
  if (window < 1 || window % 2 == 0)
    throw std::invalid_argument("gaussian_smooth_mask: window must be odd");
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_smooth_mask: sigma must be > 0");
  const int r = window / 2;
  std::vector<double> kern(static_cast<size_t>(window) * window);
  double norm = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      kern[static_cast<size_t>(dy + r) * window + (dx + r)] = g;
      norm += g;
    }
  for (double& g : kern) g /= norm;

  Mask2D out = Mask2D::zeros(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) {
      double acc = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = std::clamp(y + dy, 0, mask.h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = std::clamp(x + dx, 0, mask.w - 1);
          if (mask.at(xx, yy)) acc += kern[static_cast<size_t>(dy + r) * window + (dx + r)];
        }
      }
      out.at(x, y) = acc >= 0.5 ? 1 : 0;
    }
  }
  return out;
}

Mask2D fill_holes(const Mask2D& mask) {
  Mask2D reached = Mask2D::zeros(mask.h, mask.w);  // border-connected background
  std::deque<std::pair<int, int>> queue;
  auto push = [&](int x, int y) {
    if (x < 0 || x >= mask.w || y < 0 || y >= mask.h) return;
    if (mask.at(x, y) || reached.at(x, y)) return;
    reached.at(x, y) = 1;
    queue.emplace_back(x, y);
  };
  for (int x = 0; x < mask.w; ++x) {
    push(x, 0);
    push(x, mask.h - 1);
  }
  for (int y = 0; y < mask.h; ++y) {
    push(0, y);
    push(mask.w - 1, y);
  }
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    push(x + 1, y);
    push(x - 1, y);
    push(x, y + 1);
    push(x, y - 1);
  }
  Mask2D out = mask;
  for (size_t i = 0; i < out.v.size(); ++i)
    if (!out.v[i] && !reached.v[i]) out.v[i] = 1;
  return out;
}

namespace {
constexpr int kCrossDx[5] = {0, 1, -1, 0, 0};
constexpr int kCrossDy[5] = {0, 0, 0, 1, -1};
}  // namespace

Mask2D erode(const Mask2D& mask) {
  Mask2D out = Mask2D::zeros(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      bool all = true;
      for (int i = 0; i < 5 && all; ++i) {
        const int xx = x + kCrossDx[i], yy = y + kCrossDy[i];
        if (xx < 0 || xx >= mask.w || yy < 0 || yy >= mask.h || !mask.at(xx, yy)) all = false;
      }
      out.at(x, y) = all ? 1 : 0;
    }
  return out;
}

Mask2D dilate(const Mask2D& mask) {
  Mask2D out = Mask2D::zeros(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      bool any = false;
      for (int i = 0; i < 5 && !any; ++i) {
        const int xx = x + kCrossDx[i], yy = y + kCrossDy[i];
        if (xx >= 0 && xx < mask.w && yy >= 0 && yy < mask.h && mask.at(xx, yy)) any = true;
      }
      out.at(x, y) = any ? 1 : 0;
    }
  return out;
}

PipelineResult postprocess_pipeline(const SliceImage& infected, const SliceImage& synthetic,
                                    const Mask2D& lung, const PostprocParams& params) {
  params.validate();
  DifferenceMap diff = subtract(infected, synthetic, lung);
  diff = median_filter(diff, params.median_window);
  BinarizeResult bin = params.method == BinarizeMethod::kmeans
                           ? kmeans_binarize(diff, params.k, params.restarts, params.seed)
                           : otsu_binarize(diff);
  Mask2D m = gaussian_smooth_mask(bin.mask, 5, params.gaussian_sigma);
  m = fill_holes(m);
  m = erode(m);
  m = dilate(m);
  for (size_t i = 0; i < m.v.size(); ++i)
    if (!lung.v[i]) m.v[i] = 0;

  PipelineResult res;
  res.mask = std::move(m);
  res.degenerate = bin.degenerate;
  res.threshold = bin.threshold;
  return res;
}

Mask2D mask_slice_window(const BinaryMask& mask, const SliceImage& slice) {
  Mask2D m = Mask2D::zeros(slice.height, slice.width);
  const auto& dims = mask.grid.dims;
  const int z = slice.slice_index;
  if (z < 0 || z >= dims[2]) return m;
  for (int y = 0; y < slice.height; ++y) {
    const int vy = slice.crop_y0 + y;
    if (vy < 0 || vy >= dims[1]) continue;
    for (int x = 0; x < slice.width; ++x) {
      const int vx = slice.crop_x0 + x;
      if (vx < 0 || vx >= dims[0]) continue;
      m.at(x, y) = mask.at(vx, vy, z);
    }
  }
  return m;
}

}  // namespace ctseg
