// SPDX-License-Identifier: Apache-2.0
//
// Driver resolution: trajectory embeddings, affinity-propagation clustering
// and chance-adjusted agreement with the true driver labels.
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dstyle/dcrnn.hpp"
#include "dstyle/features.hpp"
#include "dstyle/train_eval.hpp"

namespace dstyle::resolution {

using Vector = std::vector<double>;

/// Mean of the infer-mode FC1 outputs over a trajectory's segments.
Vector latent_trajectory(dcrnn::Dcrnn& model, const std::vector<const features::Matrix*>& segment_maps);

struct ApConfig {
  double damping = 0.5;
  /// Diagonal of the similarity matrix; NaN selects the median of the
  /// off-diagonal similarities.
  double preference = std::numeric_limits<double>::quiet_NaN();
  std::size_t max_iter = 200;
  std::size_t convergence_window = 15;

  void validate() const;
};

struct ApResult {
  std::vector<std::size_t> labels;     ///< cluster index per point
  std::vector<std::size_t> exemplars;  ///< point index of each cluster's exemplar
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t n_clusters() const { return exemplars.size(); }
};

/// Negative squared Euclidean distance.
double similarity(const Vector& a, const Vector& b);

/// Median (midpoint of the two central values for even counts) of all
/// off-diagonal similarities.
double median_similarity(const std::vector<Vector>& points);

/// Deterministic message passing (no jitter). When no exemplar emerges the
/// point with the largest self-evidence becomes the single exemplar.
ApResult affinity_propagation(const std::vector<Vector>& points, const ApConfig& cfg = {});

/// Adjusted mutual information with the exact hypergeometric expectation
/// and arithmetic-mean normalisation. Symmetric and label-permutation
/// invariant.
double ami(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth);

/// Mutual information (nats) of two labelings, from their contingency table.
double mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
/// Expected mutual information under the permutation (hypergeometric) model.
double expected_mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
double entropy(const std::vector<std::size_t>& labels);

std::size_t estimation_error(std::size_t num_clusters, std::size_t num_true_drivers);

struct LabeledLatent {
  std::string trajectory_id;
  std::string driver_id;
  Vector latent;
};

/// One embedding per test trajectory of `data`.
std::vector<LabeledLatent> test_latents(dcrnn::Dcrnn& model, const train::LabeledSegments& data);
/// Same, for the training split.
std::vector<LabeledLatent> train_latents(dcrnn::Dcrnn& model, const train::LabeledSegments& data);

struct ResolutionConfig {
  std::size_t subsets = 100;
  std::size_t drivers_per_subset = 10;
  ApConfig ap;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct SubsetScore {
  double ami = 0.0;
  std::size_t estimation_error = 0;
  std::size_t clusters = 0;
};

struct ResolutionReport {
  double average_ami = 0.0;
  double std_ami = 0.0;
  double average_ee = 0.0;
  double std_ee = 0.0;
  std::size_t subsets = 0;
  std::size_t drivers_per_subset = 0;
  std::vector<SubsetScore> per_subset;

  std::string to_json() const;
};

/// Each subset draws `drivers_per_subset` distinct drivers, clusters all of
/// their latents and scores the partition. Throws DataError when fewer
/// drivers are available. Results do not depend on the thread count.
ResolutionReport resolution_experiment(const std::vector<LabeledLatent>& latents, const ResolutionConfig& cfg);

std::string latents_csv(const std::vector<LabeledLatent>& latents);

}  // namespace dstyle::resolution
