// Copyright 2026 The mvmem Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvmem {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct RangeError : std::runtime_error {
  explicit RangeError(const std::string& m) : std::runtime_error("range error: " + m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error("contract error: " + m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("io error: " + m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};

#define MVMEM_CHECK(cond, ex, msg) \
  do {                             \
    if (!(cond)) throw ex(msg);    \
  } while (0)

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 has a standardized sequence; the mapping
// to reals is done by hand because the std distributions are
// implementation-defined.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return double(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int index(int n) { return int(u64() % uint64_t(n)); }

  double normal() {
    // Box-Muller; consumes two draws per pair, caches the second.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Mixes task name and seed into one RNG seed.
inline uint64_t seed_combine(const std::string& tag, uint64_t seed) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64(&seed, sizeof(seed), h);
  return h;
}

// ---------------------------------------------------------------------------
// Small geometry types (double precision throughout the simulator)
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  double dist(const Vec3& o) const { return (*this - o).norm(); }
  double max_abs() const { return std::max({std::fabs(x), std::fabs(y), std::fabs(z)}); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 clamp01(const Vec3& v) {
  auto c = [](double t) { return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t); };
  return {c(v.x), c(v.y), c(v.z)};
}

// Unit quaternion (w, x, y, z), canonical hemisphere w >= 0.
struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  static Quat identity() { return {1, 0, 0, 0}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quat normalized() const {
    double n = norm();
    Quat q{w / n, x / n, y / n, z / n};
    if (q.w < 0) {
      q.w = -q.w;
      q.x = -q.x;
      q.y = -q.y;
      q.z = -q.z;
    }
    return q;
  }

  Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
  }

  static Quat from_axis_angle(double ax, double ay, double az, double angle) {
    double h = 0.5 * angle;
    double s = std::sin(h);
    return Quat{std::cos(h), ax * s, ay * s, az * s}.normalized();
  }

  static Quat from_yaw(double yaw) { return from_axis_angle(0, 0, 1, yaw); }
};

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

// Extrinsic x-y-z Euler angles (radians) -> quaternion, q = qz * qy * qx.
inline Quat euler_to_quat(double rx, double ry, double rz) {
  Quat qx = Quat::from_axis_angle(1, 0, 0, rx);
  Quat qy = Quat::from_axis_angle(0, 1, 0, ry);
  Quat qz = Quat::from_axis_angle(0, 0, 1, rz);
  return (qz * qy * qx).normalized();
}

// Inverse of euler_to_quat. Returns angles in [-pi, pi).
inline std::array<double, 3> quat_to_euler(const Quat& qin) {
  Quat q = qin.normalized();
  double sinp = 2.0 * (q.w * q.y - q.z * q.x);
  double ry;
  if (std::fabs(sinp) >= 1.0)
    ry = std::copysign(M_PI / 2.0, sinp);
  else
    ry = std::asin(sinp);
  double rx = std::atan2(2.0 * (q.w * q.x + q.y * q.z), 1.0 - 2.0 * (q.x * q.x + q.y * q.y));
  double rz = std::atan2(2.0 * (q.w * q.z + q.x * q.y), 1.0 - 2.0 * (q.y * q.y + q.z * q.z));
  return {rx, ry, rz};
}

inline double quat_angle(const Quat& a, const Quat& b) {
  double d = std::fabs(a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z);
  d = std::min(1.0, d);
  return 2.0 * std::acos(d);
}

}  // namespace mvmem
