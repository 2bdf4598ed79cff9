// SPDX-License-Identifier: Apache-2.0
#include "dstyle/resolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "dstyle/error.hpp"
#include "dstyle/util.hpp"

namespace dstyle::resolution {

Vector latent_trajectory(dcrnn::Dcrnn& model, const std::vector<const features::Matrix*>& segment_maps) {
  if (segment_maps.empty()) throw DataError("trajectory has no segments");
  const std::size_t rows = segment_maps.front()->rows, cols = segment_maps.front()->cols;
  nn::Tensor batch({segment_maps.size(), rows, cols});
  for (std::size_t i = 0; i < segment_maps.size(); ++i) {
    std::copy(segment_maps[i]->data.begin(), segment_maps[i]->data.end(), batch.data() + i * rows * cols);
  }
  const auto tr = model.forward(batch, nn::Mode::Infer);
  const std::size_t d = tr.latent.dim(1);
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < segment_maps.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += tr.latent[i * d + k];
  for (auto& v : mean) v /= static_cast<double>(segment_maps.size());
  return mean;
}

void ApConfig::validate() const {
  if (!(damping >= 0.5 && damping < 1.0)) throw UsageError("damping must be in [0.5, 1)");
  if (max_iter == 0 || convergence_window == 0) throw UsageError("max_iter and convergence_window must be positive");
}

double similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("latent vectors differ in dimension");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return -s;
}

double median_similarity(const std::vector<Vector>& points) {
  std::vector<double> v;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t k = 0; k < points.size(); ++k)
      if (i != k) v.push_back(similarity(points[i], points[k]));
  if (v.empty()) throw DataError("median similarity needs at least 2 points");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

ApResult affinity_propagation(const std::vector<Vector>& points, const ApConfig& cfg) {
  cfg.validate();
  const std::size_t n = points.size();
  if (n < 2) throw DataError("affinity propagation needs at least 2 points");
  const double pref = std::isnan(cfg.preference) ? median_similarity(points) : cfg.preference;

  std::vector<double> s(n * n), r(n * n, 0.0), a(n * n, 0.0), rnew(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) s[i * n + k] = i == k ? pref : similarity(points[i], points[k]);

  const double lam = cfg.damping;
  std::vector<char> exemplar(n, 0), prev(n, 0);
  std::size_t stable = 0;
  ApResult res;
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    res.iterations = it;
    // responsibilities
    for (std::size_t i = 0; i < n; ++i) {
      double first = -std::numeric_limits<double>::infinity(), second = first;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = a[i * n + k] + s[i * n + k];
        if (v > first) {
          second = first;
          first = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double nr = s[i * n + k] - (k == arg ? second : first);
        r[i * n + k] = lam * r[i * n + k] + (1.0 - lam) * nr;
      }
    }
    // availabilities
    for (std::size_t k = 0; k < n; ++k) {
      double pos = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (i != k) pos += std::max(0.0, r[i * n + k]);
      for (std::size_t i = 0; i < n; ++i) {
        double na;
        if (i == k) {
          na = pos;
        } else {
          na = std::min(0.0, r[k * n + k] + pos - std::max(0.0, r[i * n + k]));
        }
        a[i * n + k] = lam * a[i * n + k] + (1.0 - lam) * na;
      }
    }
    for (std::size_t k = 0; k < n; ++k) exemplar[k] = (a[k * n + k] + r[k * n + k]) > 0.0;
    stable = exemplar == prev ? stable + 1 : 0;
    prev = exemplar;
    if (stable >= cfg.convergence_window) {
      res.converged = true;
      break;
    }
  }

  for (std::size_t k = 0; k < n; ++k)
    if (exemplar[k]) res.exemplars.push_back(k);
  if (res.exemplars.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (a[k * n + k] + r[k * n + k] > a[best * n + best] + r[best * n + best]) best = k;
    res.exemplars.push_back(best);
  }
  res.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < res.exemplars.size(); ++c) {
      if (res.exemplars[c] == i) {
        best = c;
        break;
      }
      if (s[i * n + res.exemplars[c]] > s[i * n + res.exemplars[best]]) best = c;
    }
    res.labels[i] = best;
  }
  return res;
}

namespace {

struct Contingency {
  std::size_t n = 0;
  std::vector<std::size_t> row_sums, col_sums;
  std::vector<std::vector<std::size_t>> cells;
};

Contingency contingency(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw DataError("labelings differ in length");
  if (a.empty()) throw DataError("empty labeling");
  std::map<std::size_t, std::size_t> ra, rb;
  for (auto v : a) ra.emplace(v, ra.size());
  for (auto v : b) rb.emplace(v, rb.size());
  Contingency c;
  c.n = a.size();
  c.row_sums.assign(ra.size(), 0);
  c.col_sums.assign(rb.size(), 0);
  c.cells.assign(ra.size(), std::vector<std::size_t>(rb.size(), 0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = ra[a[i]], y = rb[b[i]];
    ++c.cells[x][y];
    ++c.row_sums[x];
    ++c.col_sums[y];
  }
  return c;
}

double entropy_of(const std::vector<std::size_t>& sums, std::size_t n) {
  double h = 0.0;
  for (auto s : sums) {
    if (s == 0) continue;
    const double p = static_cast<double>(s) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h;
}

double mi_of(const Contingency& c) {
  const double n = static_cast<double>(c.n);
  double mi = 0.0;
  for (std::size_t i = 0; i < c.row_sums.size(); ++i)
    for (std::size_t j = 0; j < c.col_sums.size(); ++j) {
      const auto nij = c.cells[i][j];
      if (nij == 0) continue;
      const double v = static_cast<double>(nij);
      mi += v / n * std::log(n * v / (static_cast<double>(c.row_sums[i]) * static_cast<double>(c.col_sums[j])));
    }
  return std::max(mi, 0.0);
}

double emi_of(const Contingency& c) {
  const auto n = static_cast<double>(c.n);
  const double lg_n = std::lgamma(n + 1.0);
  double emi = 0.0;
  for (auto ai_s : c.row_sums) {
    const auto ai = static_cast<double>(ai_s);
    for (auto bj_s : c.col_sums) {
      const auto bj = static_cast<double>(bj_s);
      const double lo = std::max(1.0, ai + bj - n);
      const double hi = std::min(ai, bj);
      const double fixed = std::lgamma(ai + 1.0) + std::lgamma(bj + 1.0) + std::lgamma(n - ai + 1.0) +
                           std::lgamma(n - bj + 1.0) - lg_n;
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double log_p = fixed - std::lgamma(nij + 1.0) - std::lgamma(ai - nij + 1.0) -
                             std::lgamma(bj - nij + 1.0) - std::lgamma(n - ai - bj + nij + 1.0);
        emi += nij / n * std::log(n * nij / (ai * bj)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::size_t, std::size_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

}  // namespace

double entropy(const std::vector<std::size_t>& labels) {
  auto c = contingency(labels, labels);
  return entropy_of(c.row_sums, c.n);
}

double mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return mi_of(contingency(a, b));
}

double expected_mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return emi_of(contingency(a, b));
}

double ami(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
  const auto c = contingency(pred, truth);
  const double mi = mi_of(c);
  const double emi = emi_of(c);
  const double norm = 0.5 * (entropy_of(c.row_sums, c.n) + entropy_of(c.col_sums, c.n));
  const double denom = norm - emi;
  if (std::abs(denom) < 1e-12) return same_partition(pred, truth) ? 1.0 : 0.0;
  return (mi - emi) / denom;
}

std::size_t estimation_error(std::size_t num_clusters, std::size_t num_true_drivers) {
  return num_clusters > num_true_drivers ? num_clusters - num_true_drivers : num_true_drivers - num_clusters;
}

namespace {

std::vector<LabeledLatent> latents_for(dcrnn::Dcrnn& model, const std::vector<const features::SegmentRecord*>& segs) {
  std::map<std::string, std::vector<const features::SegmentRecord*>> by_traj;
  for (const auto* s : segs) by_traj[s->trajectory_id].push_back(s);
  std::vector<LabeledLatent> out;
  for (const auto& [id, recs] : by_traj) {
    std::vector<const features::Matrix*> maps;
    for (const auto* r : recs) maps.push_back(&r->map);
    out.push_back({id, recs.front()->driver_id, latent_trajectory(model, maps)});
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::vector<LabeledLatent> test_latents(dcrnn::Dcrnn& model, const train::LabeledSegments& data) {
  return latents_for(model, data.test);
}

std::vector<LabeledLatent> train_latents(dcrnn::Dcrnn& model, const train::LabeledSegments& data) {
  return latents_for(model, data.train);
}

ResolutionReport resolution_experiment(const std::vector<LabeledLatent>& latents, const ResolutionConfig& cfg) {
  cfg.ap.validate();
  if (cfg.subsets == 0 || cfg.drivers_per_subset == 0) throw UsageError("subsets and drivers_per_subset must be positive");
  std::map<std::string, std::vector<std::size_t>> by_driver;
  for (std::size_t i = 0; i < latents.size(); ++i) by_driver[latents[i].driver_id].push_back(i);
  std::vector<std::string> drivers;
  for (const auto& [d, idx] : by_driver) drivers.push_back(d);
  if (drivers.size() < cfg.drivers_per_subset) {
    throw DataError("only " + std::to_string(drivers.size()) + " drivers available, " +
                    std::to_string(cfg.drivers_per_subset) + " per subset requested");
  }

  // Draw every subset up front so results are independent of scheduling.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::string>> draws(cfg.subsets);
  for (auto& d : draws) {
    d = drivers;
    std::shuffle(d.begin(), d.end(), rng);
    d.resize(cfg.drivers_per_subset);
  }

  ResolutionReport rep;
  rep.subsets = cfg.subsets;
  rep.drivers_per_subset = cfg.drivers_per_subset;
  rep.per_subset.resize(cfg.subsets);
  std::vector<std::string> errors(cfg.subsets);
  auto run = [&](std::size_t k) {
    try {
      std::vector<Vector> pts;
      std::vector<std::size_t> truth;
      for (std::size_t d = 0; d < draws[k].size(); ++d)
        for (auto i : by_driver.at(draws[k][d])) {
          pts.push_back(latents[i].latent);
          truth.push_back(d);
        }
      const auto ap = affinity_propagation(pts, cfg.ap);
      rep.per_subset[k] = {ami(ap.labels, truth), estimation_error(ap.n_clusters(), cfg.drivers_per_subset),
                           ap.n_clusters()};
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  };
  if (cfg.threads <= 1) {
    for (std::size_t k = 0; k < cfg.subsets; ++k) run(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < cfg.threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < cfg.subsets;) run(k);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError("resolution subset failed: " + e);

  std::vector<double> amis, ees;
  for (const auto& s : rep.per_subset) {
    amis.push_back(s.ami);
    ees.push_back(static_cast<double>(s.estimation_error));
  }
  rep.average_ami = mean_of(amis);
  rep.std_ami = stddev_of(amis);
  rep.average_ee = mean_of(ees);
  rep.std_ee = stddev_of(ees);
  return rep;
}

std::string ResolutionReport::to_json() const {
  nlohmann::json j = {{"average_ami", average_ami}, {"std_ami", std_ami},   {"average_ee", average_ee},
                      {"std_ee", std_ee},           {"subsets", subsets}, {"drivers_per_subset", drivers_per_subset}};
  return j.dump(2) + "\n";
}

std::string latents_csv(const std::vector<LabeledLatent>& latents) {
  std::ostringstream out;
  out << "trajectory_id,driver_id";
  const std::size_t d = latents.empty() ? 0 : latents.front().latent.size();
  for (std::size_t k = 0; k < d; ++k) out << ",z" << k;
  out << '\n';
  for (const auto& l : latents) {
    out << l.trajectory_id << ',' << l.driver_id;
    for (double v : l.latent) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace dstyle::resolution
