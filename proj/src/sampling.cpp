// SPDX-License-Identifier: Apache-2.0
#include "dstyle/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "dstyle/error.hpp"
#include "dstyle/util.hpp"

namespace dstyle::sampling {

using nlohmann::json;

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Threshold: return "threshold";
    case Strategy::Stratified: return "stratified";
    case Strategy::Random: return "random";
  }
  return "?";
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Strategy strategy_from_string(const std::string& s) {
  if (s == "threshold") return Strategy::Threshold;
  if (s == "stratified") return Strategy::Stratified;
  if (s == "random") return Strategy::Random;
  throw UsageError("unknown sampling strategy '" + s + "'");
}

void SamplingParams::validate(Strategy s) const {
  if (n_trajectories == 0 || n_drivers == 0) throw UsageError("N and M must be positive");
  if (s == Strategy::Threshold && !(nu > 0.0 && nu <= 1.0)) throw UsageError("nu must be in (0,1]");
  if (s == Strategy::Stratified) {
    if (thresholds.empty()) throw UsageError("stratified sampling needs thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > (i ? thresholds[i - 1] : 0.0))) {
        throw UsageError("thresholds must be positive and strictly increasing");
      }
    }
    if (n_trajectories % thresholds.size() != 0) {
      throw UsageError("N=" + std::to_string(n_trajectories) + " is not divisible by " +
                       std::to_string(thresholds.size()) + " buckets");
    }
  }
}

std::vector<std::string> DatasetManifest::drivers() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (out.empty() || out.back() != e.driver_id) out.push_back(e.driver_id);
  }
  return out;
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  return a.name == b.name && a.strategy == b.strategy && a.params.nu == b.params.nu &&
         a.params.thresholds == b.params.thresholds &&
         a.params.n_trajectories == b.params.n_trajectories &&
         a.params.n_drivers == b.params.n_drivers && a.params.seed == b.params.seed &&
         a.stats == b.stats && a.entries == b.entries;
}

std::vector<std::size_t> greedy_compatible_subset(const geo::SimilarityMatrix& m, double nu,
                                                  const std::vector<std::size_t>& order) {
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) { return m(i, k) < nu; });
    if (ok) kept.push_back(i);
  }
  return kept;
}

std::vector<double> average_similarity(const geo::SimilarityMatrix& m) {
  const std::size_t n = m.size();
  std::vector<double> avg(n, 0.0);
  if (n < 2) return avg;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) s += m(i, j);
    avg[i] = s / static_cast<double>(n - 1);
  }
  return avg;
}

int bucket_of(double avg, const std::vector<double>& thresholds) {
  double lo = 0.0;
  for (std::size_t b = 0; b < thresholds.size(); ++b) {
    if (avg >= lo && avg < thresholds[b]) return static_cast<int>(b);
    lo = thresholds[b];
  }
  return -1;
}

namespace {

std::vector<std::string> choose_drivers(std::vector<std::string> eligible, std::size_t m,
                                        std::mt19937_64& rng) {
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(m);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

void require_eligible(std::size_t have, std::size_t need) {
  if (have < need) {
    throw DataError("only " + std::to_string(have) + " eligible drivers, " + std::to_string(need) +
                    " required");
  }
}

std::string fmt_nu(double nu) { return format_double(nu); }

DatasetManifest finish(DatasetManifest m, const std::map<std::string, std::vector<std::string>>& picks,
                       const SimilarityIndex& index) {
  for (const auto& [driver, ids] : picks) {
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    for (auto& id : sorted) m.entries.push_back({driver, id, Split::Train});
  }
  m.stats = manifest_stats(m, index);
  return m;
}

}  // namespace

DatasetManifest threshold_sample(const SimilarityIndex& index, const SamplingParams& params) {
  params.validate(Strategy::Threshold);
  std::mt19937_64 rng(params.seed);
  std::map<std::string, std::vector<std::string>> kept_by_driver;
  std::vector<std::string> eligible;
  for (const auto& [driver, m] : index) {
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto kept = greedy_compatible_subset(m, params.nu, order);
    if (kept.size() < params.n_trajectories) continue;
    kept.resize(params.n_trajectories);
    auto& ids = kept_by_driver[driver];
    for (auto k : kept) ids.push_back(m.trajectory_ids[k]);
    eligible.push_back(driver);
  }
  require_eligible(eligible.size(), params.n_drivers);
  std::map<std::string, std::vector<std::string>> picks;
  for (auto& d : choose_drivers(eligible, params.n_drivers, rng)) picks[d] = kept_by_driver[d];

  DatasetManifest out;
  out.name = "Tb-" + std::to_string(params.n_drivers) + "_" + fmt_nu(params.nu);
  out.strategy = Strategy::Threshold;
  out.params = params;
  return finish(std::move(out), picks, index);
}

DatasetManifest stratified_sample(const SimilarityIndex& index, const SamplingParams& params) {
  params.validate(Strategy::Stratified);
  const std::size_t m_buckets = params.thresholds.size();
  const std::size_t per_bucket = params.n_trajectories / m_buckets;
  std::mt19937_64 rng(params.seed);

  std::map<std::string, std::vector<std::vector<std::size_t>>> buckets_by_driver;
  std::vector<std::string> eligible;
  for (const auto& [driver, m] : index) {
    auto avg = average_similarity(m);
    std::vector<std::vector<std::size_t>> buckets(m_buckets);
    for (std::size_t i = 0; i < m.size(); ++i) {
      int b = bucket_of(avg[i], params.thresholds);
      if (b >= 0) buckets[static_cast<std::size_t>(b)].push_back(i);
    }
    bool ok = std::all_of(buckets.begin(), buckets.end(),
                          [&](const auto& b) { return b.size() >= per_bucket; });
    if (!ok) continue;
    eligible.push_back(driver);
    buckets_by_driver[driver] = std::move(buckets);
  }
  require_eligible(eligible.size(), params.n_drivers);

  std::map<std::string, std::vector<std::string>> picks;
  for (auto& d : choose_drivers(eligible, params.n_drivers, rng)) {
    const auto& m = index.at(d);
    auto& ids = picks[d];
    for (auto bucket : buckets_by_driver[d]) {
      std::shuffle(bucket.begin(), bucket.end(), rng);
      for (std::size_t k = 0; k < per_bucket; ++k) ids.push_back(m.trajectory_ids[bucket[k]]);
    }
  }

  DatasetManifest out;
  out.name = "St-" + std::to_string(params.n_drivers);
  out.strategy = Strategy::Stratified;
  out.params = params;
  return finish(std::move(out), picks, index);
}

DatasetManifest random_sample(const SimilarityIndex& index, const SamplingParams& params) {
  params.validate(Strategy::Random);
  std::mt19937_64 rng(params.seed);
  std::vector<std::string> eligible;
  for (const auto& [driver, m] : index)
    if (m.size() >= params.n_trajectories) eligible.push_back(driver);
  require_eligible(eligible.size(), params.n_drivers);

  std::map<std::string, std::vector<std::string>> picks;
  for (auto& d : choose_drivers(eligible, params.n_drivers, rng)) {
    auto ids = index.at(d).trajectory_ids;
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(params.n_trajectories);
    picks[d] = std::move(ids);
  }

  DatasetManifest out;
  out.name = "Rd-" + std::to_string(params.n_drivers);
  out.strategy = Strategy::Random;
  out.params = params;
  return finish(std::move(out), picks, index);
}

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

namespace {

template <typename F>
void for_each_pair(const DatasetManifest& manifest, const SimilarityIndex& index, F&& f) {
  std::map<std::string, std::vector<std::size_t>> rows;
  for (const auto& e : manifest.entries) {
    auto it = index.find(e.driver_id);
    if (it == index.end()) throw DataError("no similarity matrix for driver " + e.driver_id);
    rows[e.driver_id].push_back(it->second.index_of(e.trajectory_id));
  }
  for (const auto& [driver, idx] : rows) {
    const auto& m = index.at(driver);
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) f(m(idx[a], idx[b]));
  }
}

}  // namespace

SimilarityStats manifest_stats(const DatasetManifest& manifest, const SimilarityIndex& index) {
  std::vector<double> scores;
  for_each_pair(manifest, index, [&](double s) { scores.push_back(s); });
  if (scores.empty()) return {};
  SimilarityStats st;
  st.p50 = nearest_rank(scores, 0.5);
  st.p90 = nearest_rank(scores, 0.9);
  st.max = *std::max_element(scores.begin(), scores.end());
  return st;
}

double max_intra_driver_similarity(const DatasetManifest& manifest, const SimilarityIndex& index) {
  double mx = 0.0;
  for_each_pair(manifest, index, [&](double s) { mx = std::max(mx, s); });
  return mx;
}

DatasetManifest split_manifest(DatasetManifest manifest, double train_fraction,
                               std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw UsageError("train_fraction must be in (0,1)");
  }
  std::mt19937_64 rng(seed);
  std::map<std::string, std::vector<std::size_t>> by_driver;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    by_driver[manifest.entries[i].driver_id].push_back(i);
  for (auto& [driver, idx] : by_driver) {
    if (idx.size() < 2) throw DataError("driver " + driver + " has fewer than 2 trajectories");
    auto n_train = static_cast<std::size_t>(
        std::ceil(static_cast<double>(idx.size()) * train_fraction - 1e-9));
    n_train = std::min(n_train, idx.size() - 1);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k)
      manifest.entries[idx[k]].split = k < n_train ? Split::Train : Split::Test;
  }
  return manifest;
}

std::string to_json(const DatasetManifest& m) {
  json j;
  j["name"] = m.name;
  j["strategy"] = to_string(m.strategy);
  j["params"] = {{"nu", m.params.nu},
                 {"thresholds", m.params.thresholds},
                 {"n_trajectories", m.params.n_trajectories},
                 {"n_drivers", m.params.n_drivers}};
  j["seed"] = m.params.seed;
  j["stats"] = {{"p50", m.stats.p50}, {"p90", m.stats.p90}, {"max", m.stats.max}};
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back(
        {{"driver_id", e.driver_id}, {"trajectory_id", e.trajectory_id}, {"split", to_string(e.split)}});
  }
  j["entries"] = std::move(entries);
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  try {
    auto j = json::parse(text);
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    const auto& p = j.at("params");
    m.params.nu = p.at("nu").get<double>();
    m.params.thresholds = p.at("thresholds").get<std::vector<double>>();
    m.params.n_trajectories = p.at("n_trajectories").get<std::size_t>();
    m.params.n_drivers = p.at("n_drivers").get<std::size_t>();
    m.params.seed = j.at("seed").get<std::uint64_t>();
    m.stats = {j.at("stats").at("p50").get<double>(), j.at("stats").at("p90").get<double>(),
               j.at("stats").at("max").get<double>()};
    for (const auto& e : j.at("entries")) {
      auto split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DataError("bad split '" + split + "'");
      m.entries.push_back({e.at("driver_id").get<std::string>(),
                           e.at("trajectory_id").get<std::string>(),
                           split == "train" ? Split::Train : Split::Test});
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace dstyle::sampling
