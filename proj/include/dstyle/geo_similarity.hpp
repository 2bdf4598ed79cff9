// SPDX-License-Identifier: Apache-2.0
//
// Spatial similarity between trips: greedy point matching under a haversine
// distance threshold, and per-driver pairwise matrices.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dstyle/trajectory.hpp"

namespace dstyle::geo {

inline constexpr double kEarthRadiusM = 6371000.0;

struct LatLng {
  double lat = 0.0;
  double lng = 0.0;
};

/// Great-circle distance in meters.
double haversine(LatLng a, LatLng b);

struct MatchThreshold {
  double tau = 100.0;  ///< meters
  void validate() const;
};

/// Extracts the coordinate track; throws DataError on a point without lat/lng.
std::vector<LatLng> coordinates(const Trajectory& t);

/// Fraction of points matched by the greedy scan: every point of `a`, in
/// order, claims the first unclaimed point of `b` closer than tau. Divided by
/// min(|a|, |b|). Not symmetric in general.
double similarity_score(const std::vector<LatLng>& a, const std::vector<LatLng>& b,
                        MatchThreshold thr = {});
double similarity_score(const Trajectory& a, const Trajectory& b, MatchThreshold thr = {});

/// Symmetric matrix; cell (i,j) for i<j holds score(T_i, T_j) and is mirrored.
struct SimilarityMatrix {
  std::vector<std::string> trajectory_ids;
  std::vector<double> scores;  // row-major n x n

  std::size_t size() const { return trajectory_ids.size(); }
  double operator()(std::size_t i, std::size_t j) const { return scores[i * size() + j]; }
  std::size_t index_of(const std::string& id) const;
};

/// `threads` <= 1 runs inline. Cell values do not depend on the worker count.
SimilarityMatrix pairwise_similarity(const std::vector<Trajectory>& trips, MatchThreshold thr = {},
                                     unsigned threads = 1);

}  // namespace dstyle::geo
