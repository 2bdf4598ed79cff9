// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dstyle/trajectory.hpp"
#include "dstyle/util.hpp"

namespace testing {

/// A complete 1 Hz point with the given position and kinematics.
inline dstyle::DataPoint point(std::int64_t t, double lat = 40.0, double lng = -83.0, double speed = 10.0,
                               double rpm = 2000.0, int head = 0) {
  dstyle::DataPoint p;
  p.t = t;
  p.speed = speed;
  p.accel = 0.0;
  p.rpm = rpm;
  p.lat = lat;
  p.lng = lng;
  p.head = head;
  p.acl_x = 0.0;
  p.acl_y = 0.0;
  p.acl_z = 9.81;
  return p;
}

/// Trajectory through the given (lat, lng) track, one point per second.
inline dstyle::Trajectory track(const std::vector<std::pair<double, double>>& coords, std::string id = "t",
                                std::string driver = "d") {
  std::vector<dstyle::DataPoint> pts;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    pts.push_back(point(static_cast<std::int64_t>(i), coords[i].first, coords[i].second));
  }
  return dstyle::Trajectory(std::move(id), std::move(driver), std::move(pts));
}

/// Complete trajectory of `n` points with constant speed/rpm.
inline dstyle::Trajectory constant_trip(std::size_t n, std::string id = "t", std::string driver = "d",
                                        std::int64_t t0 = 0) {
  std::vector<dstyle::DataPoint> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(point(t0 + static_cast<std::int64_t>(i)));
  return dstyle::Trajectory(std::move(id), std::move(driver), std::move(pts));
}

/// Random walk of `n` points with steps of roughly `step_m` meters.
inline std::vector<std::pair<double, double>> random_walk(std::mt19937_64& rng, std::size_t n, double lat0,
                                                          double lng0, double step_m) {
  std::normal_distribution<double> g(0.0, 1.0);
  const double deg = step_m / 111195.0;
  std::vector<std::pair<double, double>> out;
  double lat = lat0, lng = lng0;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(lat, lng);
    lat += deg * g(rng);
    lng += deg * g(rng);
  }
  return out;
}

}  // namespace testing

#include "dstyle/sampling.hpp"
#include "dstyle/synth.hpp"

namespace testing {

struct SynthSet {
  std::vector<dstyle::Trajectory> trajectories;
  dstyle::sampling::DatasetManifest manifest;  ///< every trajectory, split applied
};

/// `per_driver` trajectories of `seconds` for each profile; driver ids
/// "d0", "d1", ... in profile order.
inline SynthSet synth_set(const std::vector<dstyle::synth::StyleProfile>& profiles, std::size_t per_driver,
                          std::int64_t seconds, std::uint64_t seed, double train_fraction = 0.75) {
  SynthSet s;
  for (std::size_t d = 0; d < profiles.size(); ++d) {
    const std::string driver = "d" + std::to_string(d);
    for (std::size_t k = 0; k < per_driver; ++k) {
      const std::string id = driver + "_" + std::to_string(k);
      s.trajectories.push_back(dstyle::synth::generate_trajectory(
          profiles[d], seconds, dstyle::derive_seed(seed, id), id, driver));
      s.manifest.entries.push_back({driver, id, dstyle::sampling::Split::Train});
    }
  }
  s.manifest.name = "synthetic";
  s.manifest = dstyle::sampling::split_manifest(std::move(s.manifest), train_fraction, seed);
  return s;
}

}  // namespace testing
