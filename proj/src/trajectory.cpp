// SPDX-License-Identifier: Apache-2.0
#include "dstyle/trajectory.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <utility>

#include "dstyle/error.hpp"
#include "dstyle/util.hpp"

namespace dstyle {

bool DataPoint::complete() const {
  return speed && accel && rpm && lat && lng && head && acl_x && acl_y && acl_z;
}

void validate_point(const DataPoint& p) {
  if (p.lat && (*p.lat < -90.0 || *p.lat > 90.0)) throw DataError("latitude out of range");
  if (p.lng && (*p.lng < -180.0 || *p.lng > 180.0)) throw DataError("longitude out of range");
  if (p.head && (*p.head < 0 || *p.head > 359)) throw DataError("heading out of range");
  if (p.rpm && *p.rpm < 0.0) throw DataError("negative rpm");
}

Trajectory::Trajectory(std::string trajectory_id, std::string driver_id,
                       std::vector<DataPoint> points)
    : id_(std::move(trajectory_id)), driver_(std::move(driver_id)), points_(std::move(points)) {
  if (points_.size() < 2) {
    throw DataError("trajectory " + id_ + " has fewer than 2 points");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    validate_point(points_[i]);
    if (i > 0 && points_[i].t <= points_[i - 1].t) {
      throw DataError("trajectory " + id_ + ": timestamps not strictly increasing at t=" +
                      std::to_string(points_[i].t));
    }
  }
}

void PreprocessConfig::validate() const {
  if (trim_seconds < 0) throw UsageError("trim_seconds must be >= 0");
  if (min_duration > max_duration) throw UsageError("min_duration exceeds max_duration");
}

namespace {

template <typename T>
std::optional<T> field(std::string_view s, std::size_t line, const char* name) {
  if (s.empty()) return std::nullopt;
  if constexpr (std::is_same_v<T, int>) {
    auto v = parse_int(s);
    if (!v) throw DataError("line " + std::to_string(line) + ": bad " + name);
    return static_cast<int>(*v);
  } else {
    auto v = parse_double(s);
    if (!v) throw DataError("line " + std::to_string(line) + ": bad " + name);
    return *v;
  }
}

template <typename T>
void put(std::string& out, const std::optional<T>& v) {
  out.push_back(',');
  if (!v) return;
  if constexpr (std::is_same_v<T, int>) {
    out += std::to_string(*v);
  } else {
    out += format_double(*v);
  }
}

}  // namespace

std::vector<Trajectory> parse_trajectories(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<std::size_t, DataPoint>>>
      groups;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line.empty()) continue;
      if (line != kCsvHeader) throw DataError("line 1: unexpected header");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() != 12) {
      throw DataError("line " + std::to_string(lineno) + ": expected 12 fields, got " +
                      std::to_string(cols.size()));
    }
    if (cols[0].empty() || cols[1].empty()) {
      throw DataError("line " + std::to_string(lineno) + ": empty driver_id or trajectory_id");
    }
    DataPoint p;
    auto t = parse_int(cols[2]);
    if (!t) throw DataError("line " + std::to_string(lineno) + ": bad t");
    p.t = *t;
    p.speed = field<double>(cols[3], lineno, "speed");
    p.accel = field<double>(cols[4], lineno, "accel");
    p.rpm = field<double>(cols[5], lineno, "rpm");
    p.lat = field<double>(cols[6], lineno, "lat");
    p.lng = field<double>(cols[7], lineno, "lng");
    p.head = field<int>(cols[8], lineno, "head");
    p.acl_x = field<double>(cols[9], lineno, "acl_x");
    p.acl_y = field<double>(cols[10], lineno, "acl_y");
    p.acl_z = field<double>(cols[11], lineno, "acl_z");
    try {
      validate_point(p);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    groups[{std::string(cols[0]), std::string(cols[1])}].emplace_back(lineno, p);
  }

  std::vector<Trajectory> out;
  out.reserve(groups.size());
  for (auto& [key, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.second.t < b.second.t; });
    std::vector<DataPoint> points;
    points.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].second.t == rows[i - 1].second.t) {
        throw DataError("line " + std::to_string(rows[i].first) + ": duplicate timestamp " +
                        std::to_string(rows[i].second.t) + " in trajectory " + key.second);
      }
      points.push_back(rows[i].second);
    }
    out.emplace_back(key.second, key.first, std::move(points));
  }
  return out;
}

void write_trajectories(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  out << kCsvHeader << '\n';
  std::string row;
  for (const auto& tr : trajectories) {
    for (const auto& p : tr.points()) {
      row.clear();
      row += tr.driver();
      row.push_back(',');
      row += tr.id();
      row.push_back(',');
      row += std::to_string(p.t);
      put(row, p.speed);
      put(row, p.accel);
      put(row, p.rpm);
      put(row, p.lat);
      put(row, p.lng);
      put(row, p.head);
      put(row, p.acl_x);
      put(row, p.acl_y);
      put(row, p.acl_z);
      row.push_back('\n');
      out << row;
    }
  }
}

std::optional<Trajectory> preprocess(const Trajectory& trajectory, const PreprocessConfig& cfg) {
  const auto& pts = trajectory.points();
  const std::int64_t lo = pts.front().t + cfg.trim_seconds;
  const std::int64_t hi = pts.back().t - cfg.trim_seconds;
  if (cfg.drop_missing &&
      !std::all_of(pts.begin(), pts.end(), [](const DataPoint& p) { return p.complete(); })) {
    return std::nullopt;
  }
  std::vector<DataPoint> kept;
  for (const auto& p : pts) {
    if (p.t >= lo && p.t <= hi) kept.push_back(p);
  }
  if (kept.size() < 2) return std::nullopt;
  const auto duration = kept.back().t - kept.front().t;
  if (duration < cfg.min_duration || duration > cfg.max_duration) return std::nullopt;
  return Trajectory(trajectory.id(), trajectory.driver(), std::move(kept));
}

}  // namespace dstyle
