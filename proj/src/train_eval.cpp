// SPDX-License-Identifier: Apache-2.0
#include "dstyle/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dstyle/error.hpp"
#include "dstyle/util.hpp"

namespace dstyle::train {

using features::Matrix;
using features::SegmentRecord;

void TrainConfig::validate() const {
  if (batch_size < 2) throw UsageError("batch_size must be at least 2");
  if (epochs == 0) throw UsageError("epochs must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train_fraction must be in (0,1)");
  optimizer.validate();
}

void ProbVector::validate() const {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw NumericError("negative or NaN probability");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw NumericError("probability vector does not sum to 1");
}

LabeledSegments label_segments(const sampling::DatasetManifest& manifest,
                               const std::vector<SegmentRecord>& segments) {
  LabeledSegments out;
  out.drivers = manifest.drivers();
  std::sort(out.drivers.begin(), out.drivers.end());
  for (std::size_t i = 0; i < out.drivers.size(); ++i) out.label_of[out.drivers[i]] = i;

  std::map<std::string, const sampling::Entry*> entry_of;
  for (const auto& e : manifest.entries) entry_of[e.trajectory_id] = &e;
  std::set<std::string> seen;
  for (const auto& r : segments) {
    auto it = entry_of.find(r.trajectory_id);
    if (it == entry_of.end()) continue;
    if (it->second->driver_id != r.driver_id) {
      throw DataError("segment of " + r.trajectory_id + " labelled " + r.driver_id +
                      " but manifest says " + it->second->driver_id);
    }
    (it->second->split == sampling::Split::Train ? out.train : out.test).push_back(&r);
    seen.insert(r.trajectory_id);
  }
  for (const auto& e : manifest.entries) {
    if (!seen.count(e.trajectory_id)) throw DataError("trajectory " + e.trajectory_id + " has no encoded segments");
  }
  return out;
}

dcrnn::ArchitectureConfig architecture_for(const features::EncodingConfig& enc, std::size_t num_drivers,
                                           bool ablation) {
  dcrnn::ArchitectureConfig a;
  a.feature_count = enc.features.size();
  a.time_len = enc.cols();
  a.num_drivers = num_drivers;
  a.ablation_no_bn_residual = ablation;
  return a;
}

std::pair<std::vector<double>, std::vector<double>> input_statistics(
    const std::vector<const SegmentRecord*>& segs) {
  if (segs.empty()) throw DataError("no training segments");
  const std::size_t rows = segs.front()->map.rows, cols = segs.front()->map.cols;
  std::vector<double> mean(rows, 0.0), sd(rows, 0.0);
  const double count = static_cast<double>(segs.size() * cols);
  for (const auto* s : segs)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) mean[r] += s->map(r, c);
  for (auto& m : mean) m /= count;
  for (const auto* s : segs)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) sd[r] += (s->map(r, c) - mean[r]) * (s->map(r, c) - mean[r]);
  for (auto& v : sd) {
    v = std::sqrt(v / count);
    if (!(v > 1e-8)) v = 1.0;
  }
  return {mean, sd};
}

namespace {

nn::Tensor make_batch(const std::vector<const Matrix*>& maps, std::size_t begin, std::size_t end) {
  const std::size_t rows = maps[begin]->rows, cols = maps[begin]->cols;
  nn::Tensor t({end - begin, rows, cols});
  for (std::size_t i = begin; i < end; ++i) {
    if (maps[i]->rows != rows || maps[i]->cols != cols) throw ShapeError("inconsistent segment map shapes");
    std::copy(maps[i]->data.begin(), maps[i]->data.end(), t.data() + (i - begin) * rows * cols);
  }
  return t;
}

std::uint64_t batch_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  return derive_seed(seed, "batch/" + std::to_string(epoch) + "/" + std::to_string(batch));
}

}  // namespace

void recalibrate_batch_norm(dcrnn::Dcrnn& model, const std::vector<const features::SegmentRecord*>& segs,
                            std::size_t batch_size) {
  if (!model.has_batch_norm()) return;
  if (segs.empty()) throw DataError("batch-norm recalibration needs segments");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  std::vector<const Matrix*> maps;
  maps.reserve(segs.size());
  for (const auto* r : segs) maps.push_back(&r->map);
  const std::size_t d = model.config().fc1_units;
  std::vector<double> latent;
  latent.reserve(maps.size() * d);
  for (std::size_t lo = 0; lo < maps.size(); lo += batch_size) {
    const std::size_t hi = std::min(maps.size(), lo + batch_size);
    const auto tr = model.forward(make_batch(maps, lo, hi), nn::Mode::Infer);
    latent.insert(latent.end(), tr.latent.data(), tr.latent.data() + tr.latent.size());
  }
  const double n = static_cast<double>(maps.size());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < maps.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += latent[i * d + j];
  for (double& m : mean) m /= n;
  for (std::size_t i = 0; i < maps.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) var[j] += (latent[i * d + j] - mean[j]) * (latent[i * d + j] - mean[j]);
  for (double& v : var) v /= n;
  model.set_batch_norm_statistics(mean, var);
}

std::vector<EpochRecord> train(dcrnn::Dcrnn& model, const LabeledSegments& data, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("empty training set");
  auto [mean, sd] = input_statistics(data.train);
  model.set_input_normalization(mean, sd);

  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const Matrix*> maps(order.size());
  std::vector<std::size_t> labels(order.size());
  std::vector<EpochRecord> history;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      maps[i] = &data.train[order[i]]->map;
      labels[i] = data.label(*data.train[order[i]]);
    }
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size)
      batches.emplace_back(b, std::min(order.size(), b + cfg.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }
    if (batches.back().second - batches.back().first < 2) {
      throw DataError("training needs at least 2 segments for batch-norm");
    }

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [lo, hi] = batches[b];
      try {
        model.params().zero_grad();
        model.forward(make_batch(maps, lo, hi), nn::Mode::Train, batch_seed(cfg.seed, epoch, b));
        std::vector<std::size_t> y(labels.begin() + static_cast<std::ptrdiff_t>(lo),
                                   labels.begin() + static_cast<std::ptrdiff_t>(hi));
        const double loss = model.backward(y);
        nn::rmsprop_step(model.params(), cfg.optimizer);
        loss_sum += loss * static_cast<double>(hi - lo);
        seen += hi - lo;
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(seen);
    // Train mode never reads the running statistics, so recalibrating here
    // leaves the trajectory of the weights untouched.
    if (epoch == cfg.epochs || (cfg.evaluate_each_epoch && !data.test.empty()))
      recalibrate_batch_norm(model, data.train, cfg.batch_size);
    if (cfg.evaluate_each_epoch && !data.test.empty()) {
      auto ev = evaluate(model, data);
      rec.seg_accuracy = ev.seg_accuracy;
      rec.traj_accuracy = ev.traj_accuracy;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::vector<ProbVector> predict_segments(dcrnn::Dcrnn& model, const std::vector<const Matrix*>& maps) {
  std::vector<ProbVector> out;
  out.reserve(maps.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < maps.size(); lo += kChunk) {
    const std::size_t hi = std::min(maps.size(), lo + kChunk);
    auto tr = model.forward(make_batch(maps, lo, hi), nn::Mode::Infer);
    const auto probs = nn::softmax(tr.logits);
    const std::size_t c = probs.dim(1);
    for (std::size_t i = 0; i < hi - lo; ++i) {
      ProbVector pv;
      pv.p.assign(probs.data() + i * c, probs.data() + (i + 1) * c);
      out.push_back(std::move(pv));
    }
  }
  return out;
}

ProbVector predict_segment(dcrnn::Dcrnn& model, const Matrix& map) {
  return predict_segments(model, {&map}).front();
}

ProbVector average_probabilities(const std::vector<ProbVector>& segs) {
  if (segs.empty()) throw DataError("cannot average zero segment predictions");
  ProbVector avg;
  avg.p.assign(segs.front().p.size(), 0.0);
  for (const auto& s : segs) {
    if (s.p.size() != avg.p.size()) throw ShapeError("probability vectors differ in length");
    for (std::size_t k = 0; k < avg.p.size(); ++k) avg.p[k] += s.p[k];
  }
  for (auto& v : avg.p) v /= static_cast<double>(segs.size());
  return avg;
}

std::size_t argmax(const std::vector<double>& v) {
  if (v.empty()) throw DataError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

TrajectoryPrediction predict_trajectory(dcrnn::Dcrnn& model, const std::vector<const Matrix*>& segment_maps) {
  if (segment_maps.empty()) throw DataError("trajectory has no segments");
  TrajectoryPrediction tp;
  tp.probs = average_probabilities(predict_segments(model, segment_maps));
  tp.driver = argmax(tp.probs.p);
  return tp;
}

TrajectoryPrediction predict_trajectory(dcrnn::Dcrnn& model, const Trajectory& trajectory,
                                        const features::EncodingConfig& enc) {
  const auto recs = features::encode_trajectory(trajectory, enc);
  std::vector<const Matrix*> maps;
  for (const auto& r : recs) maps.push_back(&r.map);
  return predict_trajectory(model, maps);
}

double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truth) {
  if (predictions.size() != truth.size()) throw DataError("prediction/truth length mismatch");
  if (truth.empty()) throw DataError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

EvalReport evaluate(dcrnn::Dcrnn& model, const LabeledSegments& data) {
  if (data.test.empty()) throw DataError("empty test set");
  std::vector<const Matrix*> maps;
  for (const auto* r : data.test) maps.push_back(&r->map);
  const auto probs = predict_segments(model, maps);

  std::vector<std::size_t> seg_pred, seg_truth;
  std::map<std::string, std::vector<std::size_t>> by_traj;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    seg_pred.push_back(argmax(probs[i].p));
    seg_truth.push_back(data.label(*data.test[i]));
    by_traj[data.test[i]->trajectory_id].push_back(i);
  }
  std::vector<std::size_t> traj_pred, traj_truth;
  for (const auto& [id, idx] : by_traj) {
    std::vector<ProbVector> segs;
    for (auto i : idx) segs.push_back(probs[i]);
    traj_pred.push_back(argmax(average_probabilities(segs).p));
    traj_truth.push_back(seg_truth[idx.front()]);
  }
  EvalReport rep;
  rep.seg_accuracy = accuracy(seg_pred, seg_truth);
  rep.traj_accuracy = accuracy(traj_pred, traj_truth);
  rep.n_segments = seg_pred.size();
  rep.n_trajectories = traj_pred.size();
  return rep;
}

std::vector<SubsetResult> feature_subset_experiment(
    const std::vector<Trajectory>& trajectories, const sampling::DatasetManifest& manifest,
    const std::vector<std::vector<features::Feature>>& subsets, const features::EncodingConfig& base,
    const TrainConfig& cfg, std::size_t repeats) {
  if (repeats == 0) throw UsageError("repeats must be positive");
  std::set<std::string> wanted;
  for (const auto& e : manifest.entries) wanted.insert(e.trajectory_id);
  std::vector<SubsetResult> rows;
  for (const auto& subset : subsets) {
    features::EncodingConfig enc = base;
    enc.features = subset;
    enc.validate();
    std::vector<SegmentRecord> segs;
    for (const auto& t : trajectories) {
      if (!wanted.count(t.id())) continue;
      auto recs = features::encode_trajectory(t, enc);
      std::move(recs.begin(), recs.end(), std::back_inserter(segs));
    }
    auto data = label_segments(manifest, segs);
    SubsetResult row{subset, {}};
    for (std::size_t k = 0; k < repeats; ++k) {
      TrainConfig tc = cfg;
      tc.evaluate_each_epoch = false;
      if (k > 0) tc.seed = derive_seed(cfg.seed, "repeat/" + std::to_string(k));
      dcrnn::Dcrnn model(architecture_for(enc, data.drivers.size(), cfg.ablation_no_bn_residual),
                         derive_seed(tc.seed, "init"));
      train(model, data, tc);
      const auto r = evaluate(model, data);
      row.report.seg_accuracy += r.seg_accuracy / static_cast<double>(repeats);
      row.report.traj_accuracy += r.traj_accuracy / static_cast<double>(repeats);
      row.report.n_segments = r.n_segments;
      row.report.n_trajectories = r.n_trajectories;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string history_to_json(const std::vector<EpochRecord>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : history) {
    nlohmann::json j = {{"epoch", r.epoch}, {"loss", r.loss}};
    j["seg_accuracy"] = r.seg_accuracy ? nlohmann::json(*r.seg_accuracy) : nlohmann::json(nullptr);
    j["traj_accuracy"] = r.traj_accuracy ? nlohmann::json(*r.traj_accuracy) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string subset_report_csv(const std::vector<SubsetResult>& rows) {
  std::ostringstream out;
  out << "features,segment_accuracy,trajectory_accuracy\n";
  for (const auto& r : rows) {
    out << '"' << features::join_feature_list(r.features) << "\"," << format_double(r.report.seg_accuracy)
        << ',' << format_double(r.report.traj_accuracy) << '\n';
  }
  return out.str();
}

}  // namespace dstyle::train
