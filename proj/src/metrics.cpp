// Copyright 2026 The plseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "plseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace plseg {
namespace {

void check_same_size(MaskView a, MaskView b) {
  if (a.size() != b.size()) throw DataError("prediction and ground truth sizes differ");
}

std::size_t count(MaskView m) {
  std::size_t n = 0;
  for (std::uint8_t v : m) n += v != 0;
  return n;
}

struct DisjointSet {
  std::vector<std::uint32_t> parent;

  std::uint32_t make() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a < b) parent[b] = a;
    else if (b < a) parent[a] = b;
  }
};

}  // namespace

ComponentLabeling connected_components(MaskView mask, Shape shape, int connectivity) {
  if (mask.size() != shape.voxels()) throw DataError("mask size does not match shape");
  if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw ConfigError("connectivity must be 6, 18 or 26");
  }
  // Neighbours already visited in raster order.
  std::vector<std::array<int, 3>> back;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int order = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && order > 1) continue;
        if (connectivity == 18 && order > 2) continue;
        back.push_back({dx, dy, dz});
      }

  std::vector<std::uint32_t> provisional(mask.size(), 0);  // 0 = none, else set id + 1
  DisjointSet ds;
  for (int z = 0; z < shape.nz; ++z)
    for (int y = 0; y < shape.ny; ++y)
      for (int x = 0; x < shape.nx; ++x) {
        const std::size_t i = shape.index(x, y, z);
        if (!mask[i]) continue;
        std::uint32_t label = 0;
        for (const auto& d : back) {
          const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
          if (!shape.contains(nx, ny, nz)) continue;
          const std::uint32_t l = provisional[shape.index(nx, ny, nz)];
          if (!l) continue;
          if (!label) label = l;
          else ds.unite(label - 1, l - 1);
        }
        provisional[i] = label ? label : ds.make() + 1;
      }

  ComponentLabeling out;
  out.ids.assign(mask.size(), 0);
  std::vector<std::int32_t> final_id(ds.parent.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!provisional[i]) continue;
    const std::uint32_t root = ds.find(provisional[i] - 1);
    if (!final_id[root]) {
      final_id[root] = ++out.count;
      out.voxels.emplace_back();
    }
    out.ids[i] = final_id[root];
    out.voxels[static_cast<std::size_t>(final_id[root] - 1)].push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

namespace {

// Lower envelope of parabolas (x - pos_q)^2 + f_q over the finite sites of one
// line; writes squared distances back into f.
void edt_line(double* f, int n, std::ptrdiff_t stride, double spacing, std::vector<double>& pos,
              std::vector<double>& val, std::vector<int>& v, std::vector<double>& bound,
              std::vector<double>& out) {
  pos.clear();
  val.clear();
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (std::isfinite(fq)) {
      pos.push_back(q * spacing);
      val.push_back(fq);
    }
  }
  if (pos.empty()) return;
  const int m = static_cast<int>(pos.size());
  v.assign(static_cast<std::size_t>(m), 0);
  bound.assign(static_cast<std::size_t>(m) + 1, 0.0);
  int k = 0;
  v[0] = 0;
  bound[0] = -std::numeric_limits<double>::infinity();
  bound[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < m; ++q) {
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((val[static_cast<std::size_t>(q)] + pos[static_cast<std::size_t>(q)] * pos[static_cast<std::size_t>(q)]) -
           (val[static_cast<std::size_t>(p)] + pos[static_cast<std::size_t>(p)] * pos[static_cast<std::size_t>(p)])) /
          (2.0 * (pos[static_cast<std::size_t>(q)] - pos[static_cast<std::size_t>(p)]));
      if (s <= bound[static_cast<std::size_t>(k)] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    bound[static_cast<std::size_t>(k)] = s;
    bound[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  out.assign(static_cast<std::size_t>(n), 0.0);
  k = 0;
  for (int q = 0; q < n; ++q) {
    const double x = q * spacing;
    while (bound[static_cast<std::size_t>(k) + 1] < x) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double d = x - pos[static_cast<std::size_t>(p)];
    out[static_cast<std::size_t>(q)] = d * d + val[static_cast<std::size_t>(p)];
  }
  for (int q = 0; q < n; ++q) f[q * stride] = out[static_cast<std::size_t>(q)];
}

}  // namespace

std::vector<double> distance_transform(MaskView mask, Shape shape, Spacing spacing) {
  if (mask.size() != shape.voxels()) throw DataError("mask size does not match shape");
  if (count(mask) == 0) throw DataError("distance transform of an empty mask");
  std::vector<double> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    f[i] = mask[i] ? 0.0 : std::numeric_limits<double>::infinity();
  }
  std::vector<double> pos, val, bound, out;
  std::vector<int> v;
  const std::ptrdiff_t sy = shape.nx;
  const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(shape.nx) * shape.ny;
  for (int z = 0; z < shape.nz; ++z)
    for (int y = 0; y < shape.ny; ++y)
      edt_line(&f[shape.index(0, y, z)], shape.nx, 1, spacing.x, pos, val, v, bound, out);
  for (int z = 0; z < shape.nz; ++z)
    for (int x = 0; x < shape.nx; ++x)
      edt_line(&f[shape.index(x, 0, z)], shape.ny, sy, spacing.y, pos, val, v, bound, out);
  for (int y = 0; y < shape.ny; ++y)
    for (int x = 0; x < shape.nx; ++x)
      edt_line(&f[shape.index(x, y, 0)], shape.nz, sz, spacing.z, pos, val, v, bound, out);
  for (double& d : f) d = std::sqrt(d);
  return f;
}

Mask surface_voxels(MaskView mask, Shape shape) {
  Mask out(mask.size(), 0);
  static constexpr int kSix[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                     {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < shape.nz; ++z)
    for (int y = 0; y < shape.ny; ++y)
      for (int x = 0; x < shape.nx; ++x) {
        const std::size_t i = shape.index(x, y, z);
        if (!mask[i]) continue;
        for (const auto& d : kSix) {
          const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
          if (!shape.contains(nx, ny, nz) || !mask[shape.index(nx, ny, nz)]) {
            out[i] = 1;
            break;
          }
        }
      }
  return out;
}

std::optional<double> dsc(MaskView pred, MaskView gt) {
  check_same_size(pred, gt);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    p += pred[i] != 0;
    g += gt[i] != 0;
    both += pred[i] && gt[i];
  }
  if (g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::optional<double> ddsc(MaskView pred, MaskView gt, Shape shape, Spacing spacing,
                           const DdscConfig& cfg) {
  check_same_size(pred, gt);
  if (cfg.theta_mm < 0.0) throw ConfigError("DDSC theta must be non-negative");
  const std::size_t g = count(gt);
  if (g == 0) return std::nullopt;
  const std::size_t p = count(pred);
  const std::vector<double> to_gt = distance_transform(gt, shape, spacing);
  std::size_t matched = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && to_gt[i] <= cfg.theta_mm) ++matched;
  }
  if (p > 0) {
    const std::vector<double> to_pred = distance_transform(pred, shape, spacing);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] && to_pred[i] <= cfg.theta_mm) ++matched;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(p + g);
}

std::optional<double> average_precision(std::span<const double> probs, MaskView gt) {
  if (probs.size() != gt.size()) throw DataError("probability and mask sizes differ");
  const std::size_t positives = count(gt);
  if (positives == 0) return std::nullopt;
  std::vector<std::uint32_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
  });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = probs[order[k]];
    while (k < order.size() && probs[order[k]] == t) {
      tp += gt[order[k]] != 0;
      ++seen;
      ++k;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double avd(MaskView pred, MaskView gt, Spacing spacing, double icv_ml) {
  check_same_size(pred, gt);
  if (!(icv_ml > 0.0)) throw DataError("intracranial volume must be positive");
  const double ml = spacing.voxel_volume_mm3() / 1000.0;
  const double vp = static_cast<double>(count(pred)) * ml;
  const double vg = static_cast<double>(count(gt)) * ml;
  return std::abs(vp - vg) / icv_ml * 100.0;
}

std::optional<double> asd(MaskView pred, MaskView gt, Shape shape, Spacing spacing) {
  check_same_size(pred, gt);
  if (count(pred) == 0 || count(gt) == 0) return std::nullopt;
  const Mask sp = surface_voxels(pred, shape);
  const Mask sg = surface_voxels(gt, shape);
  const std::vector<double> to_sg = distance_transform(sg, shape, spacing);
  const std::vector<double> to_sp = distance_transform(sp, shape, spacing);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]) {
      sum += to_sg[i];
      ++n;
    }
    if (sg[i]) {
      sum += to_sp[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

LesionCounts lesion_prec_rec(MaskView pred, MaskView gt, Shape shape) {
  check_same_size(pred, gt);
  LesionCounts out;
  const ComponentLabeling g = connected_components(gt, shape);
  if (g.count == 0) return out;
  const ComponentLabeling p = connected_components(pred, shape);
  auto hits = [](const ComponentLabeling& comps, MaskView other) {
    int n = 0;
    for (const auto& vox : comps.voxels) {
      for (std::uint32_t i : vox) {
        if (other[i]) {
          ++n;
          break;
        }
      }
    }
    return n;
  };
  out.recall = static_cast<double>(hits(g, pred)) / g.count;
  if (p.count > 0) out.precision = static_cast<double>(hits(p, gt)) / p.count;
  return out;
}

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kAp: return "AP";
    case Metric::kDsc: return "DSC";
    case Metric::kDdsc: return "DDSC";
    case Metric::kAvd: return "AVD";
    case Metric::kAsd: return "ASD";
    case Metric::kLpre: return "LPRE";
    case Metric::kLrec: return "LREC";
  }
  return "?";
}

MetricRow evaluate_subject(const std::string& subject, const std::string& dataset,
                           const ProbVolume& probs, const LabelVolume& gt, MaskView brain_mask,
                           const DdscConfig& cfg) {
  if (!(probs.shape() == gt.shape())) {
    throw DataError("subject '" + subject + "': prediction shape " + to_string(probs.shape()) +
                    " differs from ground truth " + to_string(gt.shape()));
  }
  const Shape shape = gt.shape();
  const Spacing sp = gt.spacing();
  const double icv = icv_voxels(brain_mask, sp).ml;
  const std::vector<std::uint8_t> arg = probs.argmax();
  MetricRow row;
  row.subject = subject;
  row.dataset = dataset;
  for (ClassId c : {ClassId::kWmh, ClassId::kIsl}) {
    const int ch = probs.channel_of(c);
    if (ch < 0) throw DataError("prediction lacks class " + std::string(class_name(c)));
    const std::uint8_t code = c == ClassId::kWmh ? kCodeWmh : kCodeIsl;
    Mask p(gt.size()), g(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      p[i] = arg[i] == ch;
      g[i] = gt[i] == code;
    }
    ClassMetrics& m = c == ClassId::kWmh ? row.wmh : row.isl;
    const double ml = sp.voxel_volume_mm3() / 1000.0;
    m.vol_pred_ml = static_cast<double>(count(p)) * ml;
    m.vol_gt_ml = static_cast<double>(count(g)) * ml;
    m.gt_empty = count(g) == 0;
    m.pred_empty = count(p) == 0;
    m[Metric::kAp] = average_precision(probs.channel(ch), g);
    m[Metric::kDsc] = dsc(p, g);
    m[Metric::kDdsc] = ddsc(p, g, shape, sp, cfg);
    m[Metric::kAvd] = avd(p, g, sp, icv);
    m[Metric::kAsd] = asd(p, g, shape, sp);
    const LesionCounts l = lesion_prec_rec(p, g, shape);
    m[Metric::kLpre] = l.precision;
    m[Metric::kLrec] = l.recall;
  }
  if (row.isl.gt_empty) row.isl_false_positive = !row.isl.pred_empty;
  return row;
}

std::optional<double> subject_fp_rate(const std::vector<MetricRow>& rows, ClassId c) {
  int negatives = 0, flagged = 0;
  for (const MetricRow& r : rows) {
    const ClassMetrics& m = r.of(c);
    if (!m.gt_empty) continue;
    ++negatives;
    flagged += !m.pred_empty;
  }
  if (negatives == 0) return std::nullopt;
  return 100.0 * flagged / negatives;
}

BlandAltman bland_altman(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw DataError("Bland-Altman inputs are not paired");
  if (pred.size() < 2) throw DataError("Bland-Altman analysis needs at least two pairs");
  BlandAltman b;
  b.n = pred.size();
  for (std::size_t i = 0; i < b.n; ++i) b.mean_diff += pred[i] - gt[i];
  b.mean_diff /= static_cast<double>(b.n);
  double ss = 0.0;
  for (std::size_t i = 0; i < b.n; ++i) {
    const double d = pred[i] - gt[i] - b.mean_diff;
    ss += d * d;
  }
  b.sd = std::sqrt(ss / static_cast<double>(b.n - 1));
  b.loa_low = b.mean_diff - 1.96 * b.sd;
  b.loa_high = b.mean_diff + 1.96 * b.sd;
  return b;
}

namespace {

ClassSummary summarise(const std::vector<MetricRow>& rows, ClassId c) {
  ClassSummary s;
  for (std::size_t k = 0; k < kNumMetrics; ++k) {
    double sum = 0.0;
    int n = 0;
    for (const MetricRow& r : rows) {
      const auto& v = r.of(c).values[k];
      if (!v) continue;
      sum += *v;
      ++n;
    }
    s.n[k] = n;
    if (n) s.mean[k] = sum / n;
  }
  return s;
}

}  // namespace

Summary aggregate(const std::vector<MetricRow>& rows, const std::string& group) {
  Summary s;
  s.group = group;
  s.subjects = static_cast<int>(rows.size());
  s.wmh = summarise(rows, ClassId::kWmh);
  s.isl = summarise(rows, ClassId::kIsl);
  for (std::size_t k = 0; k < kNumMetrics; ++k) {
    if (s.wmh.mean[k] && s.isl.mean[k]) s.grand[k] = (*s.wmh.mean[k] + *s.isl.mean[k]) / 2.0;
  }
  s.isl_fp_rate = subject_fp_rate(rows, ClassId::kIsl);
  return s;
}

std::vector<Summary> aggregate_by_dataset(const std::vector<MetricRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricRow>> groups;
  for (const MetricRow& r : rows) {
    if (!groups.count(r.dataset)) order.push_back(r.dataset);
    groups[r.dataset].push_back(r);
  }
  std::vector<Summary> out;
  for (const std::string& g : order) out.push_back(aggregate(groups[g], g));
  return out;
}

}  // namespace plseg
