// SPDX-License-Identifier: Apache-2.0
//
// Labeled synthetic telemetry with controllable per-driver style.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dstyle/trajectory.hpp"

namespace dstyle::synth {

/// Piecewise-linear engine speed as a function of ground speed.
struct RpmCurve {
  std::vector<double> speeds;  ///< m/s, strictly increasing
  std::vector<double> rpms;    ///< non-decreasing
  double operator()(double speed) const;
};

struct StyleProfile {
  double cruise_speed_mean = 14.0;  ///< m/s
  double cruise_speed_std = 2.0;
  double accel_aggressiveness = 1.5;  ///< m/s^2 scale of accel/brake commands
  RpmCurve rpm_per_speed;
  double stop_frequency = 0.5;      ///< stop events per minute
  double heading_drift_rate = 1.0;  ///< deg/s
  double smoothness = 0.7;          ///< low-pass coefficient on accel, [0,1)

  /// Rejects negative rates, smoothness outside [0,1) and non-monotone curves.
  void validate() const;
};

/// Parameters spread around a shared base profile; `separation` 0 gives the
/// base profile for every seed, 1 the full spread.
StyleProfile generate_profile(std::uint64_t seed, double separation);

/// Simulates `duration_s` seconds at 1 Hz starting at `t0`. Speed integrates
/// the recorded acceleration exactly; lat/lng integrate speed along a
/// drifting random-walk heading from a random start in a 40 km box.
Trajectory generate_trajectory(const StyleProfile& profile, std::int64_t duration_s, std::uint64_t seed,
                               const std::string& trajectory_id = "t0", const std::string& driver_id = "d0",
                               std::int64_t t0 = 1500000000);

struct SynthConfig {
  std::size_t n_drivers = 10;
  std::size_t n_trajectories_per_driver = 40;
  /// Retained duration after the 2-minute trims, in minutes; the generator
  /// adds 2 * trim_seconds on top so every trip survives preprocessing.
  double min_minutes = 12.0;
  double max_minutes = 25.0;
  std::int64_t trim_seconds = 120;
  double separation = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<Trajectory> trajectories;
  std::map<std::string, StyleProfile> profiles;  ///< by driver id
};

SyntheticDataset generate_dataset(const SynthConfig& cfg);

std::string profiles_to_json(const std::map<std::string, StyleProfile>& profiles);

}  // namespace dstyle::synth
