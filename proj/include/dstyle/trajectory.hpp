// SPDX-License-Identifier: Apache-2.0
//
// Telemetry domain types, CSV ingestion and trip-level preprocessing.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dstyle {

/// One 1 Hz telemetry record. Sensor fields are optional so that missing
/// readings survive ingestion; `preprocess` decides what to do with them.
struct DataPoint {
  std::int64_t t = 0;  ///< Unix epoch seconds
  std::optional<double> speed;  ///< m/s
  std::optional<double> accel;  ///< m/s^2
  std::optional<double> rpm;
  std::optional<double> lat;  ///< degrees
  std::optional<double> lng;  ///< degrees
  std::optional<int> head;  ///< degrees, [0, 359]
  std::optional<double> acl_x;
  std::optional<double> acl_y;
  std::optional<double> acl_z;

  bool complete() const;
  friend bool operator==(const DataPoint&, const DataPoint&) = default;
};

/// Validates the per-point range invariants; throws DataError.
void validate_point(const DataPoint& p);

/// A time-ordered trip of one driver. Immutable once constructed.
class Trajectory {
 public:
  /// Throws DataError unless there are >= 2 points with strictly
  /// increasing timestamps and all fields are in range.
  Trajectory(std::string trajectory_id, std::string driver_id,
             std::vector<DataPoint> points);

  const std::string& id() const { return id_; }
  const std::string& driver() const { return driver_; }
  const std::vector<DataPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  std::int64_t duration() const { return points_.back().t - points_.front().t; }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

 private:
  std::string id_;
  std::string driver_;
  std::vector<DataPoint> points_;
};

struct PreprocessConfig {
  std::int64_t trim_seconds = 120;
  std::int64_t min_duration = 600;
  std::int64_t max_duration = 1800;
  bool drop_missing = true;

  void validate() const;
};

inline constexpr const char* kCsvHeader =
    "driver_id,trajectory_id,t,speed,accel,rpm,lat,lng,head,acl_x,acl_y,acl_z";

/// Reads the telemetry CSV. Rows may be interleaved across trips; the result
/// holds one trajectory per (driver_id, trajectory_id) ordered by that key,
/// with points sorted by timestamp.
std::vector<Trajectory> parse_trajectories(std::istream& in);

/// Writes trajectories in the same CSV schema, one row per point.
void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories);

/// Drops the first/last `trim_seconds` (by timestamp, not point count), then
/// applies the duration bounds to what remains and the missing-value filter.
/// Returns nullopt when the trip is filtered out.
std::optional<Trajectory> preprocess(const Trajectory& trajectory, const PreprocessConfig& cfg);

}  // namespace dstyle
