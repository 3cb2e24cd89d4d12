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

#ifndef PLSEG_COMMON_HPP_
#define PLSEG_COMMON_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace plseg {

// Error taxonomy. The CLI maps each kind onto a process exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int nx = 0;
  int ny = 0;
  int nz = 0;

  std::size_t voxels() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
  }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(ny) +
            static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(x);
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  bool valid() const { return nx > 0 && ny > 0 && nz > 0; }
  int operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Millimetres per voxel along x, y, z.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  double voxel_volume_mm3() const { return x * y * z; }
  bool valid() const { return x > 0.0 && y > 0.0 && z > 0.0; }
  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

std::string to_string(const Shape& shape);

// Stateless seed derivation (splitmix64 chain). Every rng stream in the
// project is keyed by (global seed, purpose, indices) through this.
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> keys);
std::uint64_t hash_tag(std::string_view tag);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is partitioned
// statically so results written per index are deterministic.
void parallel_for(std::size_t n, int jobs,
                  const std::function<void(std::size_t)>& fn);

// Hex SHA-256 of a byte range.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::string& path);

}  // namespace plseg

#endif  // PLSEG_COMMON_HPP_
