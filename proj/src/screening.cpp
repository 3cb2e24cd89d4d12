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

#include "plseg/screening.hpp"

#include <algorithm>
#include <cmath>

#include "plseg/nifti.hpp"

namespace plseg {

ScreeningConfig ScreeningConfig::preset(std::string_view name) {
  if (name == "isles") return isles();
  if (name == "soop") return soop();
  throw ConfigError("unknown screening preset '" + std::string(name) + "' (isles, soop)");
}

void ScreeningConfig::validate() const {
  auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open_unit(mean_diff_threshold) || !open_unit(fraction_threshold)) {
    throw ConfigError("screening thresholds must lie in (0, 1)");
  }
}

const SideCollapse& default_side_collapse() {
  static const SideCollapse table = [] {
    const int right[] = {41, 42, 43, 44, 46, 47, 49, 50, 51, 52, 53, 54, 58, 60};
    const int left[] = {2, 3, 4, 5, 7, 8, 10, 11, 12, 13, 17, 18, 26, 28};
    SideCollapse t;
    for (std::size_t i = 0; i < std::size(right); ++i) t[right[i]] = left[i];
    return t;
  }();
  return table;
}

RegionMap read_region_map(const std::string& path) {
  const Volume3D v = read_volume(path);
  RegionMap r;
  r.shape = v.shape();
  r.ids.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double id = std::round(v[i]);
    if (!(id >= 0.0)) throw DataError("negative region id in " + path);
    r.ids[i] = static_cast<int>(id);
  }
  return r;
}

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Volume3D percentile_normalise(const Volume3D& x) {
  if (x.size() == 0) throw DataError("cannot normalise an empty image");
  std::vector<double> sorted(x.data().begin(), x.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double p1 = percentile(sorted, 1.0);
  const double p99 = percentile(sorted, 99.0);
  if (!(p99 > p1)) throw DataError("image is constant between its 1st and 99th percentiles");
  Volume3D out(x.shape(), x.spacing());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (std::clamp(x[i], p1, p99) - p1) / (p99 - p1);
  }
  return out;
}

ScreeningResult screen_scan(const Volume3D& x_norm, MaskView isl_mask, const RegionMap& regions,
                            const ScreeningConfig& cfg, const SideCollapse& collapse) {
  cfg.validate();
  const Shape shape = x_norm.shape();
  if (isl_mask.size() != x_norm.size() || !(regions.shape == shape) ||
      regions.ids.size() != x_norm.size()) {
    throw DataError("image, lesion mask and region map are not aligned");
  }
  std::vector<int> region(regions.ids.size());
  for (std::size_t i = 0; i < region.size(); ++i) {
    const auto it = collapse.find(regions.ids[i]);
    region[i] = it == collapse.end() ? regions.ids[i] : it->second;
  }

  ScreeningResult result;
  const ComponentLabeling comps = connected_components(isl_mask, shape, 26);
  for (int k = 0; k < comps.count; ++k) {
    const auto& vox = comps.voxels[static_cast<std::size_t>(k)];
    ComponentDiagnostic d;
    d.component = k + 1;
    d.voxels = vox.size();

    std::map<int, std::size_t> votes;
    double sum = 0.0;
    for (std::uint32_t i : vox) {
      sum += x_norm[i];
      if (region[i] > 0) ++votes[region[i]];
    }
    if (votes.empty()) {
      throw DataError("lesion component " + std::to_string(d.component) +
                      " lies entirely outside the brain regions");
    }
    // std::map iterates ids in ascending order, so the first maximum wins ties.
    d.host_region = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
                      return a.second < b.second;
                    })->first;
    d.component_mean = sum / static_cast<double>(vox.size());

    double normal = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < region.size(); ++i) {
      if (region[i] == d.host_region && !isl_mask[i]) {
        normal += x_norm[i];
        ++n;
      }
    }
    if (n == 0) {
      throw DataError("region " + std::to_string(d.host_region) +
                      " has no lesion-free voxels to estimate normal tissue");
    }
    d.normal_mean = normal / static_cast<double>(n);
    d.mean_diff = d.component_mean - d.normal_mean;

    std::size_t closer = 0;
    for (std::uint32_t i : vox) {
      if (std::abs(x_norm[i] - d.normal_mean) < std::abs(x_norm[i] - d.component_mean)) ++closer;
    }
    d.fraction_closer_to_normal = static_cast<double>(closer) / static_cast<double>(vox.size());
    d.passes = !(d.mean_diff < cfg.mean_diff_threshold) &&
               !(d.fraction_closer_to_normal > cfg.fraction_threshold);
    result.keep = result.keep && d.passes;
    result.components.push_back(d);
  }
  return result;
}

}  // namespace plseg
