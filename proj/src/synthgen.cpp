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

#include "plseg/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"
#include "plseg/nifti.hpp"
#include "plseg/sampling.hpp"

namespace plseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<SiteProfile> SynthConfig::default_sites() {
  SiteProfile a{"siteA", 0.10, 0.8, 1.6, 0.1, 0.0, -0.5};
  SiteProfile b{"siteB", 0.18, 0.5, 1.6, 0.1, 0.0, -0.5};
  SiteProfile c{"siteC", 0.10, 0.8, -0.5, 0.1, 0.0, -0.6};
  return {a, b, c};
}

void SynthConfig::validate() const {
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ConfigError("sample counts must be >= 0");
  if (!(fully_labelled_fraction >= 0.0 && fully_labelled_fraction <= 1.0)) {
    throw ConfigError("fully_labelled_fraction must lie in [0, 1]");
  }
  if (!(confusability >= 0.0 && confusability <= 1.0)) {
    throw ConfigError("confusability must lie in [0, 1]");
  }
  if (!shape.valid() || !spacing.valid()) throw ConfigError("shape and spacing must be positive");
  if (shape.nx < 12 || shape.ny < 12 || shape.nz < 12) throw ConfigError("volumes must be at least 12^3");
  for (const Interval& i : {wmh_count, wmh_radius, isl_count, isl_radius}) {
    if (!(i.lo >= 0.0 && i.hi >= i.lo)) throw ConfigError("invalid blob interval");
  }
  if (sites.size() != 3) throw ConfigError("exactly three site profiles are required");
  if (empty_isl_every < 0) throw ConfigError("empty_isl_every must be >= 0");
}

namespace {

json interval_json(Interval i) { return json::array({i.lo, i.hi}); }
Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string SynthConfig::to_json() const {
  json j;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["n_test"] = n_test;
  j["fully_labelled_fraction"] = fully_labelled_fraction;
  j["shape"] = {shape.nx, shape.ny, shape.nz};
  j["spacing"] = {spacing.x, spacing.y, spacing.z};
  j["seed"] = seed;
  j["wmh_count"] = interval_json(wmh_count);
  j["wmh_radius"] = interval_json(wmh_radius);
  j["isl_count"] = interval_json(isl_count);
  j["isl_radius"] = interval_json(isl_radius);
  j["tissue_level"] = tissue_level;
  j["texture_sd"] = texture_sd;
  j["confusability"] = confusability;
  j["empty_isl_every"] = empty_isl_every;
  j["standardise"] = standardise;
  j["sites"] = json::array();
  for (const SiteProfile& s : sites) {
    j["sites"].push_back({{"name", s.name},
                          {"noise_sd", s.noise_sd},
                          {"wmh_contrast", s.wmh_contrast},
                          {"isl_contrast", s.isl_contrast},
                          {"contrast_sd", s.contrast_sd},
                          {"cavitation_prob", s.cavitation_prob},
                          {"cavity_offset", s.cavity_offset}});
  }
  return j.dump(2);
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  SynthConfig c;
  try {
    const json j = json::parse(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n_train", c.n_train);
    get("n_val", c.n_val);
    get("n_test", c.n_test);
    get("fully_labelled_fraction", c.fully_labelled_fraction);
    get("seed", c.seed);
    get("tissue_level", c.tissue_level);
    get("texture_sd", c.texture_sd);
    get("confusability", c.confusability);
    get("empty_isl_every", c.empty_isl_every);
    get("standardise", c.standardise);
    if (j.contains("shape")) {
      const auto& s = j.at("shape");
      c.shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
    }
    if (j.contains("spacing")) {
      const auto& s = j.at("spacing");
      c.spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    }
    if (j.contains("wmh_count")) c.wmh_count = interval_from(j.at("wmh_count"));
    if (j.contains("wmh_radius")) c.wmh_radius = interval_from(j.at("wmh_radius"));
    if (j.contains("isl_count")) c.isl_count = interval_from(j.at("isl_count"));
    if (j.contains("isl_radius")) c.isl_radius = interval_from(j.at("isl_radius"));
    if (j.contains("sites")) {
      c.sites.clear();
      for (const auto& s : j.at("sites")) {
        SiteProfile p;
        p.name = s.at("name").get<std::string>();
        p.noise_sd = s.value("noise_sd", p.noise_sd);
        p.wmh_contrast = s.value("wmh_contrast", p.wmh_contrast);
        p.isl_contrast = s.value("isl_contrast", p.isl_contrast);
        p.contrast_sd = s.value("contrast_sd", p.contrast_sd);
        p.cavitation_prob = s.value("cavitation_prob", p.cavitation_prob);
        p.cavity_offset = s.value("cavity_offset", p.cavity_offset);
        c.sites.push_back(p);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid synth config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

struct Ellipsoid {
  double cx, cy, cz, rx, ry, rz;

  // Squared normalised radius of a voxel centre.
  double rho2(int x, int y, int z) const {
    const double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
    return a * a + b * b + c * c;
  }
};

// Separable Gaussian blur (sigma in voxels) with edge clamping.
void blur(std::vector<double>& v, Shape s, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (double& w : k) w /= sum;
  std::vector<double> tmp(v.size());
  const int n[3] = {s.nx, s.ny, s.nz};
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < s.nz; ++z)
      for (int y = 0; y < s.ny; ++y)
        for (int x = 0; x < s.nx; ++x) {
          int p[3] = {x, y, z};
          const int c = p[axis];
          double acc = 0.0;
          for (int i = -r; i <= r; ++i) {
            p[axis] = std::clamp(c + i, 0, n[axis] - 1);
            acc += k[static_cast<std::size_t>(i + r)] * v[s.index(p[0], p[1], p[2])];
          }
          tmp[s.index(x, y, z)] = acc;
        }
    v.swap(tmp);
  }
}

int draw_count(Interval i, Rng& rng) {
  std::uniform_int_distribution<int> d(static_cast<int>(std::lround(i.lo)),
                                       static_cast<int>(std::lround(i.hi)));
  return d(rng);
}

struct Blob {
  double cx, cy, cz, rx, ry, rz;
};

// Voxels inside an axis-aligned ellipsoidal blob.
template <typename F>
void for_blob(const Blob& b, Shape s, F&& f) {
  const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.rx)));
  const int x1 = std::min(s.nx - 1, static_cast<int>(std::ceil(b.cx + b.rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.ry)));
  const int y1 = std::min(s.ny - 1, static_cast<int>(std::ceil(b.cy + b.ry)));
  const int z0 = std::max(0, static_cast<int>(std::floor(b.cz - b.rz)));
  const int z1 = std::min(s.nz - 1, static_cast<int>(std::ceil(b.cz + b.rz)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double a = (x - b.cx) / b.rx, c = (y - b.cy) / b.ry, d = (z - b.cz) / b.rz;
        const double r2 = a * a + c * c + d * d;
        if (r2 <= 1.0) f(x, y, z, r2);
      }
}

constexpr int kMaxAttempts = 2000;

}  // namespace

SynthVolume synthesize(const SynthConfig& cfg, const SiteProfile& site, std::uint64_t seed,
                       bool with_isl) {
  const Shape s = cfg.shape;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Ellipsoid brain{(s.nx - 1) / 2.0, (s.ny - 1) / 2.0, (s.nz - 1) / 2.0,
                        0.42 * s.nx, 0.42 * s.ny, 0.42 * s.nz};
  SynthVolume out;
  out.brain = LabelVolume(s, cfg.spacing);
  out.labels = LabelVolume(s, cfg.spacing);
  out.regions = RegionMap{s, std::vector<int>(s.voxels(), 0)};
  out.lesion_offset.assign(s.voxels(), 0.0);
  for (int z = 0; z < s.nz; ++z)
    for (int y = 0; y < s.ny; ++y)
      for (int x = 0; x < s.nx; ++x) {
        if (brain.rho2(x, y, z) > 1.0) continue;
        const std::size_t i = s.index(x, y, z);
        out.brain[i] = 1;
        // Left/right hemispheres in aseg-style ids, upper and lower halves.
        const bool left = x < brain.cx;
        const bool upper = z >= brain.cz;
        out.regions.ids[i] = left ? (upper ? 2 : 3) : (upper ? 41 : 42);
      }

  std::vector<double> texture(s.voxels());
  for (double& t : texture) t = normal(rng);
  blur(texture, s, 2.0);
  double tsd = 0.0;
  for (double t : texture) tsd += t * t;
  tsd = std::sqrt(tsd / static_cast<double>(texture.size()));

  // A blob must cover at least one voxel and stay clear of the brain edge.
  auto inside_brain = [&](const Blob& b) {
    bool ok = true;
    int n = 0;
    for_blob(b, s, [&](int x, int y, int z, double) {
      ok = ok && brain.rho2(x, y, z) <= 0.85;
      ++n;
    });
    return ok && n > 0;
  };
  auto free_of = [&](const Blob& b) {
    // No voxel of the blob may touch (26-neighbourhood) an earlier blob.
    bool ok = true;
    for_blob(b, s, [&](int x, int y, int z, double) {
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (s.contains(x + dx, y + dy, z + dz)) {
              ok = ok && out.labels.at(x + dx, y + dy, z + dz) == kCodeBg;
            }
          }
    });
    return ok;
  };
  auto place = [&](Interval radius, double rho_lo, double rho_hi) {
    std::uniform_real_distribution<double> rad(radius.lo, radius.hi);
    std::uniform_real_distribution<double> dir(-1.0, 1.0);
    std::uniform_real_distribution<double> rho(rho_lo, rho_hi);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      double u[3];
      double n2 = 0.0;
      do {
        n2 = 0.0;
        for (double& v : u) {
          v = dir(rng);
          n2 += v * v;
        }
      } while (n2 > 1.0 || n2 < 1e-6);
      const double r = rho(rng) / std::sqrt(n2);
      Blob b{brain.cx + u[0] * r * brain.rx, brain.cy + u[1] * r * brain.ry,
             brain.cz + u[2] * r * brain.rz, rad(rng), rad(rng), rad(rng)};
      if (inside_brain(b) && free_of(b)) return b;
    }
    throw DataError("could not place a lesion blob after " + std::to_string(kMaxAttempts) +
                    " attempts; reduce blob sizes or counts");
  };

  const double isl_offset =
      site.isl_contrast + cfg.confusability * (site.wmh_contrast - site.isl_contrast);
  if (with_isl) {
    const int n = std::max(1, draw_count(cfg.isl_count, rng));
    for (int k = 0; k < n; ++k) {
      const Blob b = place(cfg.isl_radius, 0.35, 0.7);
      const double level = isl_offset + site.contrast_sd * normal(rng);
      const bool cavity = unit(rng) < site.cavitation_prob;
      for_blob(b, s, [&](int x, int y, int z, double r2) {
        const std::size_t i = s.index(x, y, z);
        out.labels[i] = kCodeIsl;
        out.lesion_offset[i] = cavity && r2 < 0.3 ? site.cavity_offset : level;
      });
    }
  }
  const int n_wmh = draw_count(cfg.wmh_count, rng);
  for (int k = 0; k < n_wmh; ++k) {
    const Blob b = place(cfg.wmh_radius, 0.15, 0.45);
    const double level = site.wmh_contrast + site.contrast_sd * normal(rng);
    for_blob(b, s, [&](int x, int y, int z, double) {
      const std::size_t i = s.index(x, y, z);
      out.labels[i] = kCodeWmh;
      out.lesion_offset[i] = level;
    });
  }

  out.image = Volume3D(s, cfg.spacing);
  for (std::size_t i = 0; i < s.voxels(); ++i) {
    const double noise = site.noise_sd * normal(rng);
    if (!out.brain[i]) {
      out.image[i] = noise * 0.5;
      continue;
    }
    out.image[i] = cfg.tissue_level + cfg.texture_sd * texture[i] / tsd + out.lesion_offset[i] + noise;
  }
  if (cfg.standardise) {
    double mean = 0.0, sq = 0.0;
    for (double v : out.image.data()) mean += v;
    mean /= static_cast<double>(s.voxels());
    for (double v : out.image.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(s.voxels()));
    for (double& v : out.image.data()) v = (v - mean) / sd;
  }
  return out;
}

SplitCounts split_counts(int n_train, double f) {
  SplitCounts c;
  c.fully_labelled = static_cast<int>(std::lround(f * n_train));
  const int rest = n_train - c.fully_labelled;
  c.isl_only = rest / 2;
  c.wmh_only = rest - c.isl_only;
  return c;
}

Manifest generate(const SynthConfig& cfg, const std::string& out_dir, int jobs) {
  cfg.validate();
  const fs::path root = fs::absolute(out_dir);
  const fs::path vol_dir = root / "volumes";
  fs::create_directories(vol_dir);

  struct Job {
    std::string id;
    Split split;
    int site;
    bool wmh_label, isl_label, with_isl;
    std::uint64_t seed;
  };
  std::vector<Job> todo;
  const SplitCounts counts = split_counts(cfg.n_train, cfg.fully_labelled_fraction);
  char buf[32];
  auto name = [&](const char* prefix, int k) {
    std::snprintf(buf, sizeof(buf), "%s_%03d", prefix, k);
    return std::string(buf);
  };
  auto seed_for = [&](const char* split, int k) {
    return derive_seed(cfg.seed, {hash_tag(split), static_cast<std::uint64_t>(k)});
  };
  int k = 0;
  for (int i = 0; i < counts.fully_labelled; ++i, ++k)
    todo.push_back({name("train", k), Split::kTrain, 0, true, true, true, seed_for("train", k)});
  for (int i = 0; i < counts.wmh_only; ++i, ++k)
    todo.push_back({name("train", k), Split::kTrain, 1, true, false, true, seed_for("train", k)});
  for (int i = 0; i < counts.isl_only; ++i, ++k)
    todo.push_back({name("train", k), Split::kTrain, 2, false, true, true, seed_for("train", k)});
  for (int i = 0; i < cfg.n_val; ++i)
    todo.push_back({name("val", i), Split::kValidation, i % 3, true, true, true, seed_for("val", i)});
  for (int i = 0; i < cfg.n_test; ++i) {
    const bool empty = cfg.empty_isl_every > 0 && i % cfg.empty_isl_every == cfg.empty_isl_every - 1;
    todo.push_back({name("test", i), Split::kTest, i % 3, true, true, !empty, seed_for("test", i)});
  }

  Manifest m;
  m.dataset_name = "synthetic";
  m.samples.resize(todo.size());
  parallel_for(todo.size(), jobs, [&](std::size_t j) {
    const Job& t = todo[j];
    const SiteProfile& site = cfg.sites[static_cast<std::size_t>(t.site)];
    const SynthVolume v = synthesize(cfg, site, t.seed, t.with_isl);
    const std::string base = (vol_dir / t.id).string();
    SampleRecord r;
    r.id = t.id;
    r.split = t.split;
    r.dataset = site.name;
    r.image = base + "_flair.nii.gz";
    r.brain_mask = base + "_brain.nii.gz";
    r.region_map = base + "_regions.nii.gz";
    write_volume(v.image, r.image);
    write_volume(v.brain, r.brain_mask);
    Volume3D regions(cfg.shape, cfg.spacing);
    for (std::size_t i = 0; i < regions.size(); ++i) regions[i] = v.regions.ids[i];
    write_volume(regions, *r.region_map);
    if (t.wmh_label) {
      r.wmh_label = base + "_wmh.nii.gz";
      write_volume(LabelVolume(cfg.shape, cfg.spacing, v.labels.mask_of(kCodeWmh)), *r.wmh_label);
    }
    if (t.isl_label) {
      r.isl_label = base + "_isl.nii.gz";
      write_volume(LabelVolume(cfg.shape, cfg.spacing, v.labels.mask_of(kCodeIsl)), *r.isl_label);
    }
    m.samples[j] = std::move(r);
  });
  m.validate();
  save_manifest(m, (root / "manifest.json").string());
  std::ofstream cfg_out(root / "synth_config.json", std::ios::binary | std::ios::trunc);
  cfg_out << cfg.to_json() << '\n';
  if (!cfg_out) throw DataError("cannot write synth_config.json under " + root.string());
  return m;
}

}  // namespace plseg
