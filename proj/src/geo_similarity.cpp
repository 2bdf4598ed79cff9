// SPDX-License-Identifier: Apache-2.0
#include "dstyle/geo_similarity.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include "dstyle/error.hpp"

namespace dstyle::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct BBox {
  double lat_min, lat_max, lng_min, lng_max;
};

BBox bounds(const std::vector<LatLng>& pts) {
  BBox b{pts[0].lat, pts[0].lat, pts[0].lng, pts[0].lng};
  for (const auto& p : pts) {
    b.lat_min = std::min(b.lat_min, p.lat);
    b.lat_max = std::max(b.lat_max, p.lat);
    b.lng_min = std::min(b.lng_min, p.lng);
    b.lng_max = std::max(b.lng_max, p.lng);
  }
  return b;
}

// Latitude separation (in degrees) beyond which no pair can be closer than
// tau. The great-circle distance is never below R*|dlat|; the 1e-9 slack
// keeps the filter conservative against rounding in haversine().
double lat_gate(double tau) { return tau * (1.0 + 1e-9) / (kEarthRadiusM * kDegToRad) + 1e-12; }

}  // namespace

double haversine(LatLng a, LatLng b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lng - a.lng) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

void MatchThreshold::validate() const {
  if (!(tau > 0.0)) throw UsageError("tau must be positive");
}

std::vector<LatLng> coordinates(const Trajectory& t) {
  std::vector<LatLng> out;
  out.reserve(t.size());
  for (const auto& p : t.points()) {
    if (!p.lat || !p.lng) throw DataError("trajectory " + t.id() + " has a point without lat/lng");
    out.push_back({*p.lat, *p.lng});
  }
  return out;
}

double similarity_score(const std::vector<LatLng>& a, const std::vector<LatLng>& b,
                        MatchThreshold thr) {
  if (a.empty() || b.empty()) throw DataError("similarity of an empty trajectory");
  thr.validate();
  const double gate = lat_gate(thr.tau);

  // Whole-pair rejection: if the latitude ranges are further apart than the
  // gate, no point pair can match.
  const BBox ba = bounds(a);
  const BBox bb = bounds(b);
  if (ba.lat_min - bb.lat_max > gate || bb.lat_min - ba.lat_max > gate) return 0.0;

  std::vector<char> claimed(b.size(), 0);
  std::size_t matched = 0;
  const std::size_t cap = std::min(a.size(), b.size());
  for (const auto& p : a) {
    if (matched == b.size()) break;  // every point of b is claimed
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (claimed[j]) continue;
      if (std::abs(p.lat - b[j].lat) > gate) continue;
      if (haversine(p, b[j]) < thr.tau) {
        claimed[j] = 1;
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(std::min(matched, cap)) / static_cast<double>(cap);
}

double similarity_score(const Trajectory& a, const Trajectory& b, MatchThreshold thr) {
  return similarity_score(coordinates(a), coordinates(b), thr);
}

std::size_t SimilarityMatrix::index_of(const std::string& id) const {
  auto it = std::find(trajectory_ids.begin(), trajectory_ids.end(), id);
  if (it == trajectory_ids.end()) throw DataError("trajectory " + id + " not in similarity matrix");
  return static_cast<std::size_t>(it - trajectory_ids.begin());
}

SimilarityMatrix pairwise_similarity(const std::vector<Trajectory>& trips, MatchThreshold thr,
                                     unsigned threads) {
  thr.validate();
  const std::size_t n = trips.size();
  SimilarityMatrix m;
  m.scores.assign(n * n, 0.0);
  std::vector<std::vector<LatLng>> coords;
  coords.reserve(n);
  for (const auto& t : trips) {
    m.trajectory_ids.push_back(t.id());
    coords.push_back(coordinates(t));
  }
  for (std::size_t i = 0; i < n; ++i) m.scores[i * n + i] = 1.0;

  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) cells.emplace_back(i, j);

  auto fill = [&](std::size_t c) {
    auto [i, j] = cells[c];
    const double s = similarity_score(coords[i], coords[j], thr);
    m.scores[i * n + j] = s;
    m.scores[j * n + i] = s;
  };
  if (threads <= 1 || cells.size() < 2) {
    for (std::size_t c = 0; c < cells.size(); ++c) fill(c);
    return m;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c; (c = next.fetch_add(1)) < cells.size();) fill(c);
    });
  }
  for (auto& th : pool) th.join();
  return m;
}

}  // namespace dstyle::geo
