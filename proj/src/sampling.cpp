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

#include "plseg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace plseg {

void SamplerConfig::validate() const {
  if (!patch.valid()) throw ConfigError("patch size must be positive");
  if (!(p_background >= 0.0 && p_background <= 1.0)) {
    throw ConfigError("p_background must lie in [0, 1]");
  }
}

VoxelIndex::VoxelIndex(const LabelVolume& y) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    by_code[y[i]].push_back(static_cast<std::uint32_t>(i));
  }
}

Patch extract_patch(const Volume3D& x, const LabelVolume& y, std::array<int, 3> centre,
                    Shape size) {
  Patch p;
  p.image = Volume3D(size, x.spacing());
  p.labels = LabelVolume(size, y.spacing());
  p.centre = centre;
  const Shape& src = x.shape();
  const int ox = centre[0] - size.nx / 2;
  const int oy = centre[1] - size.ny / 2;
  const int oz = centre[2] - size.nz / 2;
  for (int z = 0; z < size.nz; ++z) {
    for (int yy = 0; yy < size.ny; ++yy) {
      for (int xx = 0; xx < size.nx; ++xx) {
        const int sx = xx + ox, sy = yy + oy, sz = z + oz;
        if (!src.contains(sx, sy, sz)) continue;
        p.image.at(xx, yy, z) = x.at(sx, sy, sz);
        p.labels.at(xx, yy, z) = y.at(sx, sy, sz);
      }
    }
  }
  if (src.contains(centre[0], centre[1], centre[2])) {
    p.centre_code = y.at(centre[0], centre[1], centre[2]);
  }
  return p;
}

Patch sample_patch(const Volume3D& x, const LabelVolume& y, const SamplerConfig& cfg, Rng& rng,
                   const VoxelIndex* index) {
  if (!(x.shape() == y.shape())) throw DataError("image and label shapes differ");
  std::optional<VoxelIndex> local;
  if (!index) index = &local.emplace(y);

  std::vector<std::uint32_t> pool;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const bool want_bg = u01(rng) < cfg.p_background;
  if (!want_bg) {
    std::vector<ClassId> eligible;
    for (ClassId c : cfg.classes_trained) {
      for (std::uint8_t code = 1; code < 3; ++code) {
        if (covers_code(c, code) && !index->by_code[code].empty()) {
          eligible.push_back(c);
          break;
        }
      }
    }
    if (!eligible.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
      const ClassId c = eligible[pick(rng)];
      for (std::uint8_t code = 0; code < 3; ++code) {
        if (covers_code(c, code)) {
          pool.insert(pool.end(), index->by_code[code].begin(), index->by_code[code].end());
        }
      }
    }
  }
  if (pool.empty()) pool = index->by_code[kCodeBg];

  std::size_t flat;
  if (pool.empty()) {
    std::uniform_int_distribution<std::size_t> any(0, y.size() - 1);
    flat = any(rng);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    flat = pool[pick(rng)];
  }
  const Shape& s = y.shape();
  const int cx = static_cast<int>(flat % static_cast<std::size_t>(s.nx));
  const int cy = static_cast<int>((flat / static_cast<std::size_t>(s.nx)) %
                                  static_cast<std::size_t>(s.ny));
  const int cz = static_cast<int>(flat / (static_cast<std::size_t>(s.nx) * s.ny));
  return extract_patch(x, y, {cx, cy, cz}, cfg.patch);
}

AugmentationConfig AugmentationConfig::none() {
  AugmentationConfig c;
  c.p_flip = c.p_rotate = c.p_scale = c.p_noise = c.p_blur = 0.0;
  c.p_brightness = c.p_contrast = c.p_gamma = c.p_lowres = c.p_artifact = 0.0;
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {p_flip, p_rotate, p_scale, p_noise, p_blur, p_brightness, p_contrast, p_gamma,
                   p_gamma_invert, p_lowres, p_artifact}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probability outside [0, 1]");
  }
  for (const Range& r :
       {rotate_deg, scale, blur_sigma, brightness, contrast, gamma, lowres_factor}) {
    if (!(r.lo <= r.hi)) throw ConfigError("augmentation range is not ordered");
  }
  if (noise_std < 0.0) throw ConfigError("noise std must be non-negative");
}

void flip_axis(Volume3D& v, int axis) {
  const Shape s = v.shape();
  for (int z = 0; z < s.nz; ++z) {
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        int tx = x, ty = y, tz = z;
        if (axis == 0) tx = s.nx - 1 - x;
        if (axis == 1) ty = s.ny - 1 - y;
        if (axis == 2) tz = s.nz - 1 - z;
        const std::size_t a = s.index(x, y, z), b = s.index(tx, ty, tz);
        if (a < b) std::swap(v[a], v[b]);
      }
    }
  }
}

void flip_axis(LabelVolume& v, int axis) {
  const Shape s = v.shape();
  for (int z = 0; z < s.nz; ++z) {
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        int tx = x, ty = y, tz = z;
        if (axis == 0) tx = s.nx - 1 - x;
        if (axis == 1) ty = s.ny - 1 - y;
        if (axis == 2) tz = s.nz - 1 - z;
        const std::size_t a = s.index(x, y, z), b = s.index(tx, ty, tz);
        if (a < b) std::swap(v[a], v[b]);
      }
    }
  }
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 axis_rotation(int axis, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  switch (axis) {
    case 0: return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
    case 1: return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
    default: return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
  }
}

double trilinear_zero(const Volume3D& v, double x, double y, double z) {
  const Shape& s = v.shape();
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (!s.contains(xi, yi, zi)) continue;
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        acc += w * v.at(xi, yi, zi);
      }
    }
  }
  return acc;
}

double trilinear_clamped(const std::vector<double>& data, Shape s, double x, double y,
                         double z) {
  x = std::clamp(x, 0.0, s.nx - 1.0);
  y = std::clamp(y, 0.0, s.ny - 1.0);
  z = std::clamp(z, 0.0, s.nz - 1.0);
  const int x0 = std::min(static_cast<int>(x), s.nx - 1);
  const int y0 = std::min(static_cast<int>(y), s.ny - 1);
  const int z0 = std::min(static_cast<int>(z), s.nz - 1);
  const int x1 = std::min(x0 + 1, s.nx - 1), y1 = std::min(y0 + 1, s.ny - 1),
            z1 = std::min(z0 + 1, s.nz - 1);
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  auto at = [&](int a, int b, int c) { return data[s.index(a, b, c)]; };
  const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
  return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz;
}

// Resamples about the patch centre: output voxel u reads the source at
// inv * (u - c) + c.
void resample(Volume3D& image, LabelVolume& labels, const Mat3& inv) {
  const Shape s = image.shape();
  const double c[3] = {(s.nx - 1) / 2.0, (s.ny - 1) / 2.0, (s.nz - 1) / 2.0};
  Volume3D img_out(s, image.spacing());
  LabelVolume lab_out(s, labels.spacing());
  for (int z = 0; z < s.nz; ++z) {
    for (int y = 0; y < s.ny; ++y) {
      for (int x = 0; x < s.nx; ++x) {
        const double u[3] = {x - c[0], y - c[1], z - c[2]};
        double src[3];
        for (int i = 0; i < 3; ++i) {
          src[i] = inv[i][0] * u[0] + inv[i][1] * u[1] + inv[i][2] * u[2] + c[i];
        }
        img_out.at(x, y, z) = trilinear_zero(image, src[0], src[1], src[2]);
        const int nx = static_cast<int>(std::lround(src[0]));
        const int ny = static_cast<int>(std::lround(src[1]));
        const int nz = static_cast<int>(std::lround(src[2]));
        if (s.contains(nx, ny, nz)) lab_out.at(x, y, z) = labels.at(nx, ny, nz);
      }
    }
  }
  image = std::move(img_out);
  labels = std::move(lab_out);
}

void gaussian_blur(Volume3D& v, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& w : k) w /= sum;
  const Shape s = v.shape();
  std::vector<double> tmp(v.size());
  for (int axis = 0; axis < 3; ++axis) {
    const int n = s[axis];
    for (int z = 0; z < s.nz; ++z) {
      for (int y = 0; y < s.ny; ++y) {
        for (int x = 0; x < s.nx; ++x) {
          const int pos = axis == 0 ? x : axis == 1 ? y : z;
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            const int q = std::clamp(pos + i, 0, n - 1);
            const std::size_t idx = axis == 0   ? s.index(q, y, z)
                                    : axis == 1 ? s.index(x, q, z)
                                                : s.index(x, y, q);
            acc += k[static_cast<std::size_t>(i + radius)] * v[idx];
          }
          tmp[s.index(x, y, z)] = acc;
        }
      }
    }
    for (std::size_t i = 0; i < tmp.size(); ++i) v[i] = tmp[i];
  }
}

struct Stats {
  double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
};

Stats stats(const Volume3D& v) {
  Stats st;
  st.lo = INFINITY;
  st.hi = -INFINITY;
  for (double x : v.data()) {
    st.mean += x;
    st.lo = std::min(st.lo, x);
    st.hi = std::max(st.hi, x);
  }
  st.mean /= static_cast<double>(v.size());
  for (double x : v.data()) st.sd += (x - st.mean) * (x - st.mean);
  st.sd = std::sqrt(st.sd / static_cast<double>(v.size()));
  return st;
}

void simulate_lowres(Volume3D& v, double factor) {
  const Shape s = v.shape();
  const Shape coarse{std::max(1, static_cast<int>(std::lround(s.nx / factor))),
                     std::max(1, static_cast<int>(std::lround(s.ny / factor))),
                     std::max(1, static_cast<int>(std::lround(s.nz / factor)))};
  std::vector<double> src(v.data().begin(), v.data().end());
  std::vector<double> low(coarse.voxels());
  auto map = [](int i, int from, int to) {
    return to == 1 ? 0.0 : i * (from - 1.0) / (to - 1.0);
  };
  // Nearest-neighbour downsampling, linear upsampling.
  for (int z = 0; z < coarse.nz; ++z)
    for (int y = 0; y < coarse.ny; ++y)
      for (int x = 0; x < coarse.nx; ++x) {
        const int sx = static_cast<int>(std::lround(map(x, s.nx, coarse.nx)));
        const int sy = static_cast<int>(std::lround(map(y, s.ny, coarse.ny)));
        const int sz = static_cast<int>(std::lround(map(z, s.nz, coarse.nz)));
        low[coarse.index(x, y, z)] = src[s.index(sx, sy, sz)];
      }
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        v.at(x, y, z) = trilinear_clamped(low, coarse, map(x, coarse.nx, s.nx),
                                          map(y, coarse.ny, s.ny), map(z, coarse.nz, s.nz));
      }
}

void apply_gamma(Volume3D& v, double gamma, bool invert) {
  if (invert)
    for (double& x : v.data()) x = -x;
  const Stats before = stats(v);
  const double range = before.hi - before.lo + 1e-7;
  for (double& x : v.data()) x = std::pow((x - before.lo) / range, gamma) * range + before.lo;
  const Stats after = stats(v);
  for (double& x : v.data()) {
    x = (x - after.mean) / (after.sd + 1e-8) * before.sd + before.mean;
  }
  if (invert)
    for (double& x : v.data()) x = -x;
}

double draw(Rng& rng, Range r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }

bool fires(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

}  // namespace

AugmentationTrace augment(Volume3D& image, LabelVolume& labels, const AugmentationConfig& cfg,
                          Rng& rng) {
  if (!(image.shape() == labels.shape())) throw DataError("image and label shapes differ");
  AugmentationTrace t;

  Mat3 inv{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  if (fires(rng, cfg.p_rotate)) {
    t.rotated = true;
    Mat3 r = inv;
    for (int axis = 0; axis < 3; ++axis) {
      const double rad = draw(rng, cfg.rotate_deg) * std::numbers::pi / 180.0;
      r = matmul(axis_rotation(axis, rad), r);
    }
    // Inverse of a rotation is its transpose.
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) inv[i][j] = r[j][i];
  }
  if (fires(rng, cfg.p_scale)) {
    t.scaled = true;
    const double f = draw(rng, cfg.scale);
    for (auto& row : inv)
      for (double& x : row) x /= f;
  }
  if (t.rotated || t.scaled) resample(image, labels, inv);

  if (fires(rng, cfg.p_noise)) {
    t.noise = true;
    std::normal_distribution<double> n(0.0, cfg.noise_std);
    for (double& x : image.data()) x += n(rng);
  }
  if (fires(rng, cfg.p_blur)) {
    t.blur = true;
    gaussian_blur(image, draw(rng, cfg.blur_sigma));
  }
  if (fires(rng, cfg.p_brightness)) {
    t.brightness = true;
    const double f = draw(rng, cfg.brightness);
    for (double& x : image.data()) x *= f;
  }
  if (fires(rng, cfg.p_contrast)) {
    t.contrast = true;
    const double f = draw(rng, cfg.contrast);
    const Stats st = stats(image);
    for (double& x : image.data()) x = std::clamp((x - st.mean) * f + st.mean, st.lo, st.hi);
  }
  if (fires(rng, cfg.p_lowres)) {
    t.lowres = true;
    simulate_lowres(image, draw(rng, cfg.lowres_factor));
  }
  if (fires(rng, cfg.p_gamma)) {
    t.gamma = true;
    const bool invert = fires(rng, cfg.p_gamma_invert);
    apply_gamma(image, draw(rng, cfg.gamma), invert);
  }
  for (int axis = 0; axis < 3; ++axis) {
    if (fires(rng, cfg.p_flip)) {
      t.flipped[static_cast<std::size_t>(axis)] = true;
      flip_axis(image, axis);
      flip_axis(labels, axis);
    }
  }
  for (const auto& hook : cfg.artifact_hooks) {
    if (fires(rng, cfg.p_artifact)) hook(image, rng);
  }
  return t;
}

}  // namespace plseg
