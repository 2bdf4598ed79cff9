// SPDX-License-Identifier: Apache-2.0
//
// Feature encoding: derived GPS/heading channels, fixed-length segments,
// basic feature maps and frame-statistic aggregate maps.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dstyle/trajectory.hpp"

namespace dstyle::features {

enum class Feature : std::uint8_t {
  Speed,
  Accel,
  GpsSpeed,
  GpsAccel,
  AngularSpeed,
  Rpm,
  Head,
  AclX,
  AclY,
  AclZ,
};

inline constexpr std::size_t kFeatureCount = 10;
inline constexpr std::size_t kStatCount = 7;  // mean, min, max, P25, P50, P75, stddev

std::string_view name(Feature f);
Feature feature_from_name(std::string_view s);
/// Comma-separated names, e.g. "speed,accel,rpm".
std::vector<Feature> parse_feature_list(std::string_view csv);
std::string join_feature_list(const std::vector<Feature>& fs);

struct EncodingConfig {
  std::size_t l1 = 256;  ///< segment length in points
  std::size_t l2 = 4;    ///< frame width in columns
  std::vector<Feature> features{Feature::Speed, Feature::Accel, Feature::Rpm};

  void validate() const;
  std::size_t rows() const { return kStatCount * features.size(); }
  std::size_t cols() const { return 2 * l1 / l2; }
};

/// Row-major dense matrix with fixed dimensions.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Per-point values of all ten basic features. Entries are NaN where the
/// underlying sensor reading is missing.
struct PointFeatures {
  std::vector<std::array<double, kFeatureCount>> values;
  double at(std::size_t i, Feature f) const { return values[i][static_cast<std::size_t>(f)]; }
};

/// Fills the raw channels and computes GPS_Speed, GPS_Accel and
/// Angular_Speed by finite differences, backfilling the leading entries.
PointFeatures derive_point_features(const Trajectory& t);

/// Heading change wrapped into (-180, 180].
double wrap_heading_delta(double from_deg, double to_deg);

struct Window {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Windows of l1 points with shift l1/2: floor(2n/l1) - 1 of them, empty
/// when n < l1.
std::vector<Window> segment(std::size_t n_points, const EncodingConfig& cfg);

/// |F| x l1 map for one window. Throws DataError naming the feature and index
/// of any missing value.
Matrix basic_feature_map(const PointFeatures& pf, Window w, const EncodingConfig& cfg);

/// 7|F| x (2 l1 / l2) map: frames of width l2 with shift l2/2, the final
/// frame zero-padded on the right. Row 7f+s holds statistic s of feature f.
Matrix aggregate_feature_map(const Matrix& basic, const EncodingConfig& cfg);

/// Mean, min, max, P25, P50, P75 (linear interpolation), population stddev.
std::array<double, kStatCount> frame_statistics(std::vector<double> values);

/// One encoded segment, as stored in the segment container.
struct SegmentRecord {
  std::string trajectory_id;
  std::string driver_id;
  std::uint32_t segment_index = 0;
  Matrix map;
};

/// Encodes every segment of a trajectory.
std::vector<SegmentRecord> encode_trajectory(const Trajectory& t, const EncodingConfig& cfg);

/// Binary container: magic "DPFM", version u16, |F| u16, rows u32, cols u32,
/// feature-name table, record count u32, then per record the ids, segment
/// index and rows*cols little-endian float64 values.
void write_segments(std::ostream& out, const EncodingConfig& cfg,
                    const std::vector<SegmentRecord>& records);
struct SegmentFile {
  EncodingConfig cfg;
  std::vector<SegmentRecord> records;
};
SegmentFile read_segments(std::istream& in);

}  // namespace dstyle::features
