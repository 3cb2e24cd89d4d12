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

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "metric_oracles.hpp"
#include "plseg/metrics.hpp"
#include "plseg/synthgen.hpp"
#include "test_support.hpp"

namespace plseg {

namespace fs = std::filesystem;

namespace {

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig c;
  c.n_train = 8;
  c.n_val = 3;
  c.n_test = 8;
  c.seed = seed;
  c.shape = {24, 24, 24};
  c.isl_radius = {1.5, 2.5};
  c.wmh_count = {2, 4};
  return c;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Expected lattice-point count of an axis-aligned ellipsoid whose radii are
// drawn independently from U(lo, hi) and whose centre is uniform within a
// voxel, by plain Monte Carlo. Draws covering no voxel are rejected, as the
// generator rejects them.
double expected_blob_voxels(Interval r, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rad(r.lo, r.hi), off(0.0, 1.0);
  double total = 0.0;
  int kept = 0;
  while (kept < draws) {
    const double rx = rad(rng), ry = rad(rng), rz = rad(rng);
    const double cx = off(rng), cy = off(rng), cz = off(rng);
    const int ext = static_cast<int>(std::ceil(std::max({rx, ry, rz}))) + 1;
    int n = 0;
    for (int z = -ext; z <= ext; ++z)
      for (int y = -ext; y <= ext; ++y)
        for (int x = -ext; x <= ext; ++x) {
          const double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
          n += a * a + b * b + c * c <= 1.0;
        }
    if (n == 0) continue;
    total += n;
    ++kept;
  }
  return total / draws;
}

}  // namespace

TEST_CASE("split arithmetic") {
  const SplitCounts c = split_counts(120, 0.25);
  CHECK(c.fully_labelled == 30);
  CHECK(c.wmh_only == 45);
  CHECK(c.isl_only == 45);
  const SplitCounts odd = split_counts(9, 0.0);
  CHECK(odd.fully_labelled == 0);
  CHECK(odd.wmh_only == 5);
  CHECK(odd.isl_only == 4);
  const SplitCounts all = split_counts(17, 1.0);
  CHECK(all.fully_labelled == 17);
  CHECK(all.wmh_only + all.isl_only == 0);

  const SynthConfig d;
  CHECK(d.n_train == 120);
  CHECK(d.n_val == 12);
  CHECK(d.n_test == 40);
  CHECK(d.shape == Shape{32, 32, 32});
}

TEST_CASE("generated manifest layout and subsets") {
  const auto dir = testing::scratch_dir("synth_layout");
  SynthConfig cfg = small_config(5);
  const Manifest m = generate(cfg, dir.string(), 2);
  CHECK(m.samples.size() == 19);
  const Subsets s = derive_subsets(m);
  CHECK(s.fls.size() == 2);
  CHECK(s.pls_all.size() == 8);
  CHECK(s.pls_wmh.size() == 2 + 3);
  CHECK(s.pls_isl.size() == 2 + 3);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "synth_config.json"));

  const Manifest back = load_manifest((dir / "manifest.json").string());
  CHECK(back.samples.size() == m.samples.size());
  for (const SampleRecord* r : back.split(Split::kTest)) {
    const LoadedSample t = load_sample(*r);
    const int k = std::stoi(r->id.substr(5));
    INFO(r->id);
    CHECK((t.labels.count(kCodeIsl) == 0) == (k % 4 == 3));
    CHECK(r->dataset == cfg.sites[static_cast<std::size_t>(k % 3)].name);
  }

  cfg.fully_labelled_fraction = 1.0;
  const Manifest full = generate(cfg, (dir / "full").string());
  const Subsets f = derive_subsets(full);
  CHECK(f.fls == f.pls_all);
  CHECK(f.pls_wmh == f.pls_all);
}

TEST_CASE("same seed gives byte-identical files regardless of worker count") {
  const auto a = testing::scratch_dir("synth_a");
  const auto b = testing::scratch_dir("synth_b");
  generate(small_config(11), a.string(), 1);
  generate(small_config(11), b.string(), 3);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    INFO(rel.string());
    CHECK(bytes_of(e.path()) == bytes_of(b / rel));
    ++files;
  }
  CHECK(files > 19 * 4);

  const auto c = testing::scratch_dir("synth_c");
  generate(small_config(12), c.string(), 1);
  CHECK(bytes_of(a / "volumes" / "train_000_flair.nii.gz") !=
        bytes_of(c / "volumes" / "train_000_flair.nii.gz"));
}

TEST_CASE("labels match the voxels the lesion synthesis changed") {
  SynthConfig cfg;
  cfg.texture_sd = 0.0;
  cfg.standardise = false;
  for (SiteProfile& s : cfg.sites) s.noise_sd = 0.0;
  for (std::size_t k = 0; k < cfg.sites.size(); ++k) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const SynthVolume v = synthesize(cfg, cfg.sites[k], seed * 31 + k);
      for (std::size_t i = 0; i < v.image.size(); ++i) {
        const bool lesion = v.labels[i] != kCodeBg;
        CHECK((v.lesion_offset[i] != 0.0) == lesion);
        if (lesion) CHECK(v.brain[i] == 1);
        if (v.brain[i]) {
          CHECK(v.image[i] == cfg.tissue_level + v.lesion_offset[i]);
          CHECK((v.regions.ids[i] == 2 || v.regions.ids[i] == 3 || v.regions.ids[i] == 41 ||
                 v.regions.ids[i] == 42));
        } else {
          CHECK(v.regions.ids[i] == 0);
        }
      }
    }
  }
}

TEST_CASE("standardised images have zero mean and unit variance") {
  const SynthConfig cfg;
  const SynthVolume v = synthesize(cfg, cfg.sites[0], 3);
  double mean = 0.0, sq = 0.0;
  for (double x : v.image.data()) mean += x;
  mean /= static_cast<double>(v.image.size());
  for (double x : v.image.data()) sq += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(sq / static_cast<double>(v.image.size()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("blob counts and class prevalence follow the configured distributions") {
  const SynthConfig cfg;
  const int n = 120;
  double isl_blobs = 0.0, wmh_blobs = 0.0, isl_vox = 0.0, wmh_vox = 0.0;
  for (int k = 0; k < n; ++k) {
    const SynthVolume v = synthesize(cfg, cfg.sites[static_cast<std::size_t>(k % 3)],
                                     derive_seed(99, {static_cast<std::uint64_t>(k)}));
    const Mask wmh = v.labels.mask_of(kCodeWmh);
    const Mask isl = v.labels.mask_of(kCodeIsl);
    // Blobs keep a one-voxel gap, so each is its own 26-connected component.
    int count = 0;
    oracle::flood_fill(wmh, cfg.shape, &count);
    wmh_blobs += count;
    oracle::flood_fill(isl, cfg.shape, &count);
    isl_blobs += count;
    wmh_vox += static_cast<double>(oracle::voxels_of(wmh, cfg.shape).size());
    isl_vox += static_cast<double>(oracle::voxels_of(isl, cfg.shape).size());
  }
  // U{6..12} and U{1..2}: means 9 and 1.5, standard errors ~0.18 and ~0.05.
  CHECK(wmh_blobs / n == doctest::Approx(9.0).epsilon(0.07));
  CHECK(isl_blobs / n == doctest::Approx(1.5).epsilon(0.1));
  const double wmh_expect = 9.0 * expected_blob_voxels(cfg.wmh_radius, 20000, 1);
  const double isl_expect = 1.5 * expected_blob_voxels(cfg.isl_radius, 20000, 2);
  CHECK(wmh_vox / n == doctest::Approx(wmh_expect).epsilon(0.1));
  CHECK(isl_vox / n == doctest::Approx(isl_expect).epsilon(0.1));
}

TEST_CASE("config JSON round-trips and invalid configs are rejected") {
  SynthConfig c = small_config(42);
  c.confusability = 0.25;
  c.sites[1].noise_sd = 0.3;
  const SynthConfig back = SynthConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.seed == 42);
  CHECK(back.sites[1].noise_sd == 0.3);

  CHECK_THROWS_AS(SynthConfig::from_json("{\"fully_labelled_fraction\": 1.5}"), ConfigError);
  CHECK_THROWS_AS(SynthConfig::from_json("{\"shape\": 3}"), ConfigError);
  CHECK_THROWS_AS(SynthConfig::from_json("not json"), ConfigError);

  SynthConfig crowded = small_config(1);
  crowded.shape = {10, 10, 10};
  crowded.isl_radius = {4.0, 4.5};
  CHECK_THROWS_AS(synthesize(crowded, crowded.sites[0], 1), DataError);
}

}  // namespace plseg
