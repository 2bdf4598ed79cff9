// SPDX-License-Identifier: Apache-2.0
#include "dstyle/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numbers>
#include <random>

#include "dstyle/error.hpp"
#include "dstyle/geo_similarity.hpp"
#include "dstyle/util.hpp"

namespace dstyle::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kMinRpm = 600.0;
constexpr double kMaxRpm = 6500.0;
constexpr double kGravity = 9.81;

// Region the trips start in (about 44 km x 34 km).
constexpr double kLatLo = 39.8, kLatHi = 40.2;
constexpr double kLngLo = -83.2, kLngHi = -82.8;

}  // namespace

double RpmCurve::operator()(double speed) const {
  if (speeds.empty()) return kMinRpm;
  if (speed <= speeds.front()) return rpms.front();
  for (std::size_t k = 1; k < speeds.size(); ++k) {
    if (speed <= speeds[k]) {
      const double f = (speed - speeds[k - 1]) / (speeds[k] - speeds[k - 1]);
      return rpms[k - 1] + f * (rpms[k] - rpms[k - 1]);
    }
  }
  return rpms.back();
}

void StyleProfile::validate() const {
  if (!(cruise_speed_mean > 0.0) || cruise_speed_std < 0.0 || accel_aggressiveness < 0.0 ||
      stop_frequency < 0.0 || heading_drift_rate < 0.0) {
    throw UsageError("style profile rates must be non-negative (cruise speed positive)");
  }
  if (!(smoothness >= 0.0 && smoothness < 1.0)) throw UsageError("smoothness must be in [0,1)");
  const auto& c = rpm_per_speed;
  if (c.speeds.size() != c.rpms.size() || c.speeds.empty()) throw UsageError("rpm curve needs matching knots");
  for (std::size_t k = 1; k < c.speeds.size(); ++k) {
    if (!(c.speeds[k] > c.speeds[k - 1]) || c.rpms[k] < c.rpms[k - 1]) {
      throw UsageError("rpm curve must be increasing in speed and non-decreasing in rpm");
    }
  }
}

StyleProfile generate_profile(std::uint64_t seed, double separation) {
  if (!(separation >= 0.0 && separation <= 1.0)) throw UsageError("separation must be in [0,1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Draw every deviation regardless of separation so the stream layout is
  // fixed; separation only scales them.
  const double d_speed = u(rng), d_sstd = u(rng), d_aggr = u(rng), d_idle = u(rng), d_slope = u(rng),
               d_bend = u(rng), d_stop = u(rng), d_drift = u(rng), d_smooth = u(rng);
  const double s = separation;

  StyleProfile p;
  p.cruise_speed_mean = 15.0 + 6.0 * s * d_speed;
  p.cruise_speed_std = 2.0 + 1.0 * s * d_sstd;
  p.accel_aggressiveness = 1.6 + 0.9 * s * d_aggr;
  p.stop_frequency = 0.6 + 0.4 * s * d_stop;
  p.heading_drift_rate = 1.0 + 0.8 * s * d_drift;
  p.smoothness = 0.6 + 0.3 * s * d_smooth;

  // Idle level, slope (gear choice) and a high-speed bend in the curve.
  const double idle = 800.0 + 200.0 * s * d_idle;
  const double slope = 95.0 + 45.0 * s * d_slope;  // rpm per m/s
  const double bend = 0.75 + 0.2 * s * d_bend;     // slope factor above 20 m/s
  p.rpm_per_speed.speeds = {0.0, 10.0, 20.0, 45.0};
  p.rpm_per_speed.rpms = {idle, idle + 10.0 * slope, idle + 20.0 * slope, idle + 20.0 * slope + 25.0 * slope * bend};
  for (auto& r : p.rpm_per_speed.rpms) r = std::clamp(r, kMinRpm, kMaxRpm);
  p.validate();
  return p;
}

Trajectory generate_trajectory(const StyleProfile& profile, std::int64_t duration_s, std::uint64_t seed,
                               const std::string& trajectory_id, const std::string& driver_id, std::int64_t t0) {
  profile.validate();
  if (duration_s < 1) throw UsageError("duration must be at least one second");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto draw_target = [&] {
    return std::clamp(profile.cruise_speed_mean + profile.cruise_speed_std * gauss(rng), 3.0, 40.0);
  };

  double lat = kLatLo + (kLatHi - kLatLo) * unit(rng);
  double lng = kLngLo + (kLngHi - kLngLo) * unit(rng);
  double heading = 360.0 * unit(rng);
  const double drift_sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  double target = draw_target();
  double speed = target;
  double accel_state = 0.0;
  int dwell = 0;           // seconds left standing still
  int retarget = 30 + static_cast<int>(30 * unit(rng));
  double turn_left = 0.0;  // remaining degrees of an in-progress turn

  const double stop_p = profile.stop_frequency / 60.0;
  const double aggr = profile.accel_aggressiveness;
  std::vector<DataPoint> pts;
  pts.reserve(static_cast<std::size_t>(duration_s) + 1);
  for (std::int64_t i = 0; i <= duration_s; ++i) {
    // regime transitions
    if (dwell > 0) {
      if (--dwell == 0) target = draw_target();
    } else if (target > 0.0 && unit(rng) < stop_p) {
      target = 0.0;
    } else if (target == 0.0 && speed == 0.0) {
      dwell = 5 + static_cast<int>(25 * unit(rng));
    } else if (target > 0.0 && --retarget <= 0) {
      target = draw_target();
      retarget = 30 + static_cast<int>(30 * unit(rng));
    }

    double cmd = 0.35 * (target - speed) + 0.1 * aggr * gauss(rng);
    cmd = std::clamp(cmd, -1.5 * aggr, aggr);
    accel_state = profile.smoothness * accel_state + (1.0 - profile.smoothness) * cmd;
    double accel = accel_state;
    if (speed + accel < 0.0) {
      accel = -speed;
      accel_state = accel;
    }

    // heading: slow drift, jitter, and occasional turns while moving
    double dheading = 0.0;
    if (speed > 0.5) {
      if (turn_left == 0.0 && unit(rng) < 1.0 / 90.0) turn_left = (unit(rng) < 0.5 ? -90.0 : 90.0);
      const double turn_step = std::clamp(turn_left, -15.0, 15.0);
      turn_left -= turn_step;
      dheading = drift_sign * profile.heading_drift_rate + 1.5 * gauss(rng) + turn_step;
    }

    DataPoint p;
    p.t = t0 + i;
    p.speed = speed;
    p.accel = accel;
    p.rpm = std::clamp(profile.rpm_per_speed(speed) * (1.0 + 0.01 * gauss(rng)), kMinRpm, kMaxRpm);
    p.lat = lat;
    p.lng = lng;
    double h = std::fmod(std::round(heading), 360.0);
    if (h < 0.0) h += 360.0;
    p.head = static_cast<int>(h) % 360;
    const double yaw_rate = dheading * kDeg;  // rad/s
    p.acl_x = accel + 0.05 * gauss(rng);
    p.acl_y = speed * yaw_rate + 0.05 * gauss(rng);
    p.acl_z = kGravity + 0.05 * gauss(rng);
    pts.push_back(p);

    // advance state to the next second
    const double next_speed = speed + accel;
    const double dist = 0.5 * (speed + next_speed);
    heading = std::fmod(heading + dheading + 360.0, 360.0);
    const double theta = heading * kDeg;
    lat += dist * std::cos(theta) / geo::kEarthRadiusM / kDeg;
    lng += dist * std::sin(theta) / (geo::kEarthRadiusM * std::cos(lat * kDeg)) / kDeg;
    lat = std::clamp(lat, -89.9, 89.9);
    if (lng > 180.0) lng -= 360.0;
    if (lng < -180.0) lng += 360.0;
    speed = std::max(0.0, next_speed);
  }
  return Trajectory(trajectory_id, driver_id, std::move(pts));
}

void SynthConfig::validate() const {
  if (n_drivers == 0 || n_trajectories_per_driver == 0) throw UsageError("synth needs drivers and trajectories");
  if (!(min_minutes > 0.0 && min_minutes <= max_minutes)) throw UsageError("bad synth duration range");
  if (!(separation >= 0.0 && separation <= 1.0)) throw UsageError("separation must be in [0,1]");
  if (trim_seconds < 0) throw UsageError("trim_seconds must be >= 0");
}

namespace {
std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}
}  // namespace

SyntheticDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticDataset ds;
  std::mt19937_64 rng(derive_seed(cfg.seed, "durations"));
  std::uniform_real_distribution<double> minutes(cfg.min_minutes, cfg.max_minutes);
  for (std::size_t d = 0; d < cfg.n_drivers; ++d) {
    const std::string driver = padded("d", d);
    const auto profile = generate_profile(derive_seed(cfg.seed, "profile/" + driver), cfg.separation);
    ds.profiles[driver] = profile;
    for (std::size_t k = 0; k < cfg.n_trajectories_per_driver; ++k) {
      const std::string id = driver + "_" + padded("t", k);
      const auto retained = static_cast<std::int64_t>(std::llround(minutes(rng) * 60.0));
      const std::int64_t duration = retained + 2 * cfg.trim_seconds;
      const std::int64_t t0 = 1500000000 + static_cast<std::int64_t>(k) * 100000;
      ds.trajectories.push_back(
          generate_trajectory(profile, duration, derive_seed(cfg.seed, "trajectory/" + id), id, driver, t0));
    }
  }
  return ds;
}

std::string profiles_to_json(const std::map<std::string, StyleProfile>& profiles) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [driver, p] : profiles) {
    j[driver] = {{"cruise_speed_mean", p.cruise_speed_mean},
                 {"cruise_speed_std", p.cruise_speed_std},
                 {"accel_aggressiveness", p.accel_aggressiveness},
                 {"rpm_curve", {{"speeds", p.rpm_per_speed.speeds}, {"rpms", p.rpm_per_speed.rpms}}},
                 {"stop_frequency", p.stop_frequency},
                 {"heading_drift_rate", p.heading_drift_rate},
                 {"smoothness", p.smoothness}};
  }
  return j.dump(2) + "\n";
}

}  // namespace dstyle::synth
