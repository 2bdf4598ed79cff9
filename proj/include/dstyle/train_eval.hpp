// SPDX-License-Identifier: Apache-2.0
//
// Segment-level training and segment/trajectory-level evaluation.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dstyle/dcrnn.hpp"
#include "dstyle/features.hpp"
#include "dstyle/nn/optimizer.hpp"
#include "dstyle/sampling.hpp"

namespace dstyle::train {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 150;
  nn::OptimizerConfig optimizer;
  double train_fraction = 0.85;
  std::uint64_t seed = 0;
  bool evaluate_each_epoch = false;
  bool ablation_no_bn_residual = false;

  void validate() const;
};

/// Probability over the manifest's drivers (sorted driver order).
struct ProbVector {
  std::vector<double> p;
  /// Throws NumericError unless entries are >= 0 and sum to 1 within 1e-9.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> seg_accuracy;
  std::optional<double> traj_accuracy;
};

/// Segments grouped for training: driver labels follow the manifest's sorted
/// driver list and every segment inherits its trajectory's split.
struct LabeledSegments {
  std::vector<std::string> drivers;
  std::vector<const features::SegmentRecord*> train;
  std::vector<const features::SegmentRecord*> test;
  std::map<std::string, std::size_t> label_of;  ///< driver id -> index
  std::size_t label(const features::SegmentRecord& r) const { return label_of.at(r.driver_id); }
};

/// Throws DataError if a manifest trajectory has no segments or a segment
/// belongs to a driver that is not in the manifest. Segments of
/// trajectories outside the manifest are ignored.
LabeledSegments label_segments(const sampling::DatasetManifest& manifest,
                               const std::vector<features::SegmentRecord>& segments);

dcrnn::ArchitectureConfig architecture_for(const features::EncodingConfig& enc,
                                           std::size_t num_drivers, bool ablation);

/// Per-row mean/stddev over every training map column (stddev floored to 1).
std::pair<std::vector<double>, std::vector<double>> input_statistics(
    const std::vector<const features::SegmentRecord*>& segs);

struct EvalReport {
  double seg_accuracy = 0.0;
  double traj_accuracy = 0.0;
  std::size_t n_segments = 0;
  std::size_t n_trajectories = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// RMSProp over shuffled mini-batches; a trailing batch of one segment is
/// folded into the previous batch (batch-norm needs two). Deterministic for a
/// given seed. Throws NumericError with the epoch/batch on a non-finite loss.
std::vector<EpochRecord> train(dcrnn::Dcrnn& model, const LabeledSegments& data,
                               const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Sets the FC1 batch-norm running statistics to the exact mean and
/// population variance of the infer-mode FC1 outputs over `segs`. Running
/// averages collected in train mode see dropout-scaled activations and
/// overstate the variance the layer meets at inference. train() calls this
/// after the last epoch and before each per-epoch evaluation.
void recalibrate_batch_norm(dcrnn::Dcrnn& model, const std::vector<const features::SegmentRecord*>& segs,
                            std::size_t batch_size);

/// Softmax of infer-mode logits.
ProbVector predict_segment(dcrnn::Dcrnn& model, const features::Matrix& map);
std::vector<ProbVector> predict_segments(dcrnn::Dcrnn& model,
                                         const std::vector<const features::Matrix*>& maps);

/// Component-wise mean of the segment vectors.
ProbVector average_probabilities(const std::vector<ProbVector>& segs);
/// Index of the largest entry, lowest index on ties.
std::size_t argmax(const std::vector<double>& v);

struct TrajectoryPrediction {
  std::size_t driver = 0;
  ProbVector probs;
};

TrajectoryPrediction predict_trajectory(dcrnn::Dcrnn& model,
                                        const std::vector<const features::Matrix*>& segment_maps);
TrajectoryPrediction predict_trajectory(dcrnn::Dcrnn& model, const Trajectory& trajectory,
                                        const features::EncodingConfig& enc);

double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truth);

EvalReport evaluate(dcrnn::Dcrnn& model, const LabeledSegments& data);

struct SubsetResult {
  std::vector<features::Feature> features;
  EvalReport report;
};

/// Trains `repeats` models per feature subset on the same split and reports
/// mean accuracies. Run 0 uses cfg.seed; run k > 0 derives its seed from it.
std::vector<SubsetResult> feature_subset_experiment(
    const std::vector<Trajectory>& trajectories, const sampling::DatasetManifest& manifest,
    const std::vector<std::vector<features::Feature>>& subsets, const features::EncodingConfig& base,
    const TrainConfig& cfg, std::size_t repeats = 1);

std::string history_to_json(const std::vector<EpochRecord>& history);
std::string subset_report_csv(const std::vector<SubsetResult>& rows);

}  // namespace dstyle::train
