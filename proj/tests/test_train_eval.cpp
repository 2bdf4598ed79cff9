// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "dstyle/error.hpp"
#include "dstyle/train_eval.hpp"
#include "support.hpp"

using namespace dstyle;
using namespace dstyle::train;
using features::Feature;

namespace {

features::EncodingConfig small_encoding(std::vector<Feature> fs = {Feature::Speed, Feature::Accel, Feature::Rpm}) {
  features::EncodingConfig enc;
  enc.l1 = 64;
  enc.l2 = 4;
  enc.features = std::move(fs);
  return enc;
}

TrainConfig fast_config(std::size_t epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.seed = seed;
  return cfg;
}

std::vector<features::SegmentRecord> encode_all(const std::vector<Trajectory>& ts, const features::EncodingConfig& enc) {
  std::vector<features::SegmentRecord> out;
  for (const auto& t : ts) {
    auto r = features::encode_trajectory(t, enc);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

dcrnn::Dcrnn small_model(const features::EncodingConfig& enc, std::size_t drivers, std::uint64_t seed = 3) {
  auto arch = architecture_for(enc, drivers, false);
  arch.gru_hidden = 24;
  arch.fc1_units = 16;
  return dcrnn::Dcrnn(arch, seed);
}

synth::StyleProfile extreme(bool fast) {
  synth::StyleProfile p;
  p.cruise_speed_mean = fast ? 28.0 : 8.0;
  p.cruise_speed_std = 1.0;
  p.accel_aggressiveness = fast ? 2.5 : 0.6;
  p.stop_frequency = fast ? 0.2 : 1.2;
  p.smoothness = fast ? 0.3 : 0.85;
  p.rpm_per_speed.speeds = {0, 10, 20, 45};
  p.rpm_per_speed.rpms = fast ? std::vector<double>{900, 2600, 4300, 6400} : std::vector<double>{700, 1200, 1700, 2900};
  return p;
}

}  // namespace

TEST_SUITE("train_eval") {
  TEST_CASE("probability vectors") {
    ProbVector ok{{0.25, 0.75}};
    CHECK_NOTHROW(ok.validate());
    CHECK_THROWS_AS((ProbVector{{0.5, 0.6}}).validate(), NumericError);
    CHECK_THROWS_AS((ProbVector{{-0.1, 1.1}}).validate(), NumericError);
  }

  TEST_CASE("trajectory-level averaging") {
    auto avg = average_probabilities({ProbVector{{0.6, 0.4}}, ProbVector{{0.2, 0.8}}});
    CHECK(avg.p[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(avg.p[1] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(argmax(avg.p) == 1);
    // dyadic fixture is exact
    auto exact = average_probabilities({ProbVector{{0.5, 0.25, 0.25}}, ProbVector{{0.125, 0.625, 0.25}},
                                        ProbVector{{0.375, 0.125, 0.5}}, ProbVector{{0.0, 1.0, 0.0}}});
    CHECK(exact.p == std::vector<double>{0.25, 0.5, 0.25});
    auto one = average_probabilities({ProbVector{{0.1, 0.9}}});
    CHECK(one.p == std::vector<double>{0.1, 0.9});
    CHECK_THROWS_AS(average_probabilities({}), DataError);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax({0.3, 0.3, 0.4}) == 2);
    CHECK(argmax({0.5, 0.5}) == 0);
    CHECK(argmax({0.2, 0.4, 0.4}) == 1);
  }

  TEST_CASE("accuracy") {
    CHECK(accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
    CHECK(accuracy({1, 2, 0}, {0, 1, 2}) == 0.0);
    CHECK(accuracy({0, 1, 2, 2}, {0, 1, 2, 3}) == 0.75);
    // consistent relabeling leaves accuracy unchanged
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<std::size_t> p{0, 1, 2, 2}, t{0, 1, 2, 3}, pp, tt;
    for (auto v : p) pp.push_back(perm[v]);
    for (auto v : t) tt.push_back(perm[v]);
    CHECK(accuracy(pp, tt) == 0.75);
    CHECK_THROWS_AS(accuracy({0}, {0, 1}), DataError);
  }

  TEST_CASE("config invariants") {
    TrainConfig c;
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = TrainConfig{};
    c.train_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), UsageError);
  }

  TEST_CASE("segments inherit their trajectory's split and driver") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 4, 300, 5);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    CHECK(data.drivers == std::vector<std::string>{"d0", "d1"});
    std::set<std::string> train_ids, test_ids;
    for (auto* r : data.train) train_ids.insert(r->trajectory_id);
    for (auto* r : data.test) test_ids.insert(r->trajectory_id);
    for (const auto& id : test_ids) CHECK_FALSE(train_ids.count(id));
    for (const auto& e : set.manifest.entries) {
      CHECK(((e.split == sampling::Split::Train) ? train_ids : test_ids).count(e.trajectory_id) == 1);
    }
    for (auto* r : data.test) CHECK(data.drivers[data.label(*r)] == r->driver_id);
    // a manifest trajectory without segments is an error
    auto m = set.manifest;
    m.entries.push_back({"d0", "ghost", sampling::Split::Test});
    CHECK_THROWS_AS(label_segments(m, segs), DataError);
  }

  TEST_CASE("first batch loss is near ln(num_drivers)") {
    auto set = testing::synth_set({extreme(false), extreme(true), extreme(false), extreme(true)}, 2, 300, 6);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto model = small_model(small_encoding(), 4);
    auto stats = input_statistics(data.train);
    model.set_input_normalization(stats.first, stats.second);
    std::vector<std::size_t> labels;
    nn::Tensor batch(nn::Shape{data.train.size(), 21, 32});
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      std::copy(data.train[i]->map.data.begin(), data.train[i]->map.data.end(), batch.data() + i * 21 * 32);
      labels.push_back(data.label(*data.train[i]));
    }
    auto ce = nn::softmax_cross_entropy(model.forward(batch, nn::Mode::Infer).logits, labels);
    CHECK(std::abs(ce.loss - std::log(4.0)) < 0.25 * std::log(4.0));
  }

  TEST_CASE("single driver is learned immediately") {
    auto set = testing::synth_set({extreme(true)}, 4, 300, 7);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto model = small_model(small_encoding(), 1);
    auto hist = train::train(model, data, fast_config(1));
    CHECK(hist.at(0).loss < 1e-12);
    CHECK(evaluate(model, data).traj_accuracy == 1.0);
  }

  TEST_CASE("training is bitwise reproducible") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 3, 300, 8);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto m1 = small_model(small_encoding(), 2), m2 = small_model(small_encoding(), 2);
    auto h1 = train::train(m1, data, fast_config(2));
    auto h2 = train::train(m2, data, fast_config(2));
    CHECK(history_to_json(h1) == history_to_json(h2));
    std::stringstream a, b;
    m1.save(a);
    m2.save(b);
    CHECK(a.str() == b.str());
  }

  TEST_CASE("batch-norm statistics match infer-mode FC1 outputs after training") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 3, 300, 12);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto model = small_model(small_encoding(), 2);
    train::train(model, data, fast_config(2));
    // Oracle: one segment at a time, accumulated in a different order.
    const std::size_t d = model.config().fc1_units;
    std::vector<std::vector<double>> rows;
    for (const auto* r : data.train) {
      nn::Tensor t({1, r->map.rows, r->map.cols}, r->map.data);
      const auto tr = model.forward(t, nn::Mode::Infer);
      rows.emplace_back(tr.latent.data(), tr.latent.data() + d);
    }
    const auto& rm = model.params().at("bn1.running_mean").value;
    const auto& rv = model.params().at("bn1.running_var").value;
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0, q = 0.0;
      for (auto it = rows.rbegin(); it != rows.rend(); ++it) m += (*it)[j];
      m /= static_cast<double>(rows.size());
      for (auto it = rows.rbegin(); it != rows.rend(); ++it) q += ((*it)[j] - m) * ((*it)[j] - m);
      q /= static_cast<double>(rows.size());
      CHECK(rm[j] == doctest::Approx(m).epsilon(1e-9));
      CHECK(rv[j] == doctest::Approx(q).epsilon(1e-9));
    }
    CHECK_THROWS_AS(recalibrate_batch_norm(model, {}, 8), DataError);
    auto ablated = dcrnn::Dcrnn(architecture_for(small_encoding(), 2, true), 1);
    CHECK_NOTHROW(recalibrate_batch_norm(ablated, data.train, 8));
  }

  TEST_CASE("per-epoch evaluation does not change the trained model") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 3, 300, 13);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto m1 = small_model(small_encoding(), 2), m2 = small_model(small_encoding(), 2);
    auto quiet = fast_config(3), noisy = fast_config(3);
    noisy.evaluate_each_epoch = true;
    train::train(m1, data, quiet);
    auto h = train::train(m2, data, noisy);
    CHECK(h.back().traj_accuracy.has_value());
    std::stringstream a, b;
    m1.save(a);
    m2.save(b);
    CHECK(a.str() == b.str());
  }

  TEST_CASE("two well-separated drivers") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 20, 600, 9);
    auto segs = encode_all(set.trajectories, small_encoding());
    auto data = label_segments(set.manifest, segs);
    auto model = small_model(small_encoding(), 2);
    auto cfg = fast_config(20);
    cfg.evaluate_each_epoch = true;
    auto hist = train::train(model, data, cfg);
    for (std::size_t e = 1; e < 5; ++e) CHECK(hist[e].loss < hist[e - 1].loss);
    CHECK(hist.back().traj_accuracy.value() > 0.9);
    CHECK(hist.back().seg_accuracy.has_value());

    const auto& test_traj = set.trajectories.front();
    auto tp = predict_trajectory(model, test_traj, small_encoding());
    double s = 0.0;
    for (double v : tp.probs.p) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
    auto recs = features::encode_trajectory(test_traj, small_encoding());
    std::vector<const features::Matrix*> maps;
    for (const auto& r : recs) maps.push_back(&r.map);
    auto seg_probs = predict_segments(model, maps);
    auto ps = predict_segment(model, recs[0].map);
    for (std::size_t k = 0; k < 2; ++k) CHECK(ps.p[k] == doctest::Approx(seg_probs[0].p[k]).epsilon(1e-12));
    auto logits = model.forward(nn::Tensor(nn::Shape{1, 21, 32}, recs[0].map.data), nn::Mode::Infer).logits;
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
    CHECK(ps.p[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    auto single = predict_trajectory(model, std::vector<const features::Matrix*>{maps[0]});
    CHECK(single.probs.p == ps.p);
    CHECK_THROWS_AS(predict_trajectory(model, std::vector<const features::Matrix*>{}), DataError);

    const auto json = history_to_json(hist);
    CHECK(json.find("\"traj_accuracy\"") != std::string::npos);
  }

  TEST_CASE("rpm-only differences favour the rpm subset over heading") {
    auto a = extreme(false), b = extreme(false);
    b.rpm_per_speed.rpms = {1400, 3200, 5000, 6500};
    auto set = testing::synth_set({a, b}, 10, 600, 10);
    auto cfg = fast_config(8);
    auto rows = feature_subset_experiment(set.trajectories, set.manifest, {{Feature::Rpm}, {Feature::Head}},
                                          small_encoding(), cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].report.seg_accuracy > rows[1].report.seg_accuracy);
    CHECK(rows[0].report.traj_accuracy >= rows[1].report.traj_accuracy);
    const auto csv = subset_report_csv(rows);
    CHECK(csv.rfind("features,segment_accuracy,trajectory_accuracy\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  }
}

TEST_SUITE("train_eval") {
  TEST_CASE("repeated subset runs average their accuracies") {
    auto set = testing::synth_set({extreme(false), extreme(true)}, 4, 300, 12);
    auto cfg = fast_config(1);
    auto once = feature_subset_experiment(set.trajectories, set.manifest, {{Feature::Speed}}, small_encoding(), cfg);
    auto twice =
        feature_subset_experiment(set.trajectories, set.manifest, {{Feature::Speed}}, small_encoding(), cfg, 2);
    REQUIRE(twice.size() == 1);
    CHECK(twice[0].report.n_trajectories == once[0].report.n_trajectories);
    CHECK(twice[0].report.traj_accuracy >= 0.0);
    CHECK(twice[0].report.traj_accuracy <= 1.0);
    CHECK_THROWS_AS(
        feature_subset_experiment(set.trajectories, set.manifest, {{Feature::Speed}}, small_encoding(), cfg, 0),
        UsageError);
  }
}
