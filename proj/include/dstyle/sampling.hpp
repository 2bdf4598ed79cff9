// SPDX-License-Identifier: Apache-2.0
//
// Similarity-aware dataset curation: threshold-based, stratified and random
// sampling of (driver, trajectory) sets, plus split-aware manifests.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dstyle/geo_similarity.hpp"

namespace dstyle::sampling {

enum class Strategy { Threshold, Stratified, Random };
enum class Split { Train, Test };

const char* to_string(Strategy s);
const char* to_string(Split s);
Strategy strategy_from_string(const std::string& s);

struct Entry {
  std::string driver_id;
  std::string trajectory_id;
  Split split = Split::Train;
  friend bool operator==(const Entry&, const Entry&) = default;
};

struct SimilarityStats {
  double p50 = 0.0;
  double p90 = 0.0;
  double max = 0.0;
  friend bool operator==(const SimilarityStats&, const SimilarityStats&) = default;
};

struct SamplingParams {
  double nu = 0.2;                                 ///< threshold strategy
  std::vector<double> thresholds{0.2, 0.25, 0.3};  ///< stratified bucket edges
  std::size_t n_trajectories = 50;                 ///< N
  std::size_t n_drivers = 50;                      ///< M
  std::uint64_t seed = 0;

  void validate(Strategy s) const;
};

struct DatasetManifest {
  std::string name;
  Strategy strategy = Strategy::Random;
  SamplingParams params;
  SimilarityStats stats;
  std::vector<Entry> entries;  ///< grouped by driver, drivers in sorted order

  std::vector<std::string> drivers() const;
  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b);
};

/// Driver id -> that driver's pairwise similarity matrix.
using SimilarityIndex = std::map<std::string, geo::SimilarityMatrix>;

/// Greedy compatible subset: walk `order` and keep a trajectory when its
/// score against every kept one is below nu. Returns kept indices in walk order.
std::vector<std::size_t> greedy_compatible_subset(const geo::SimilarityMatrix& m, double nu,
                                                  const std::vector<std::size_t>& order);

/// Mean score of trajectory i against every other trajectory of the driver.
std::vector<double> average_similarity(const geo::SimilarityMatrix& m);

/// Bucket index of `avg` for edges nu_1..nu_m with nu_0 = 0, or -1 when the
/// value falls outside [0, nu_m).
int bucket_of(double avg, const std::vector<double>& thresholds);

DatasetManifest threshold_sample(const SimilarityIndex& index, const SamplingParams& params);
DatasetManifest stratified_sample(const SimilarityIndex& index, const SamplingParams& params);
DatasetManifest random_sample(const SimilarityIndex& index, const SamplingParams& params);

/// Nearest-rank percentile (rank = ceil(q * n)) of a non-empty sample.
double nearest_rank(std::vector<double> values, double q);

/// P50/P90/max over every intra-driver pair in the manifest.
SimilarityStats manifest_stats(const DatasetManifest& manifest, const SimilarityIndex& index);

/// Per-driver split, train count = ceil(n * train_fraction) capped at n - 1.
DatasetManifest split_manifest(DatasetManifest manifest, double train_fraction,
                               std::uint64_t seed);

std::string to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

/// Exhaustive check used by tests and the CLI: largest score between any two
/// trajectories of the same driver in the manifest.
double max_intra_driver_similarity(const DatasetManifest& manifest, const SimilarityIndex& index);

}  // namespace dstyle::sampling
