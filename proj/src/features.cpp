// SPDX-License-Identifier: Apache-2.0
#include "dstyle/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "dstyle/error.hpp"
#include "dstyle/geo_similarity.hpp"

namespace dstyle::features {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kNames = {
    "speed", "accel", "gps_speed", "gps_accel", "angular_speed",
    "rpm",   "head",  "acl_x",     "acl_y",     "acl_z"};

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

double opt(const std::optional<double>& v) { return v ? *v : kMissing; }

}  // namespace

std::string_view name(Feature f) { return kNames[static_cast<std::size_t>(f)]; }

Feature feature_from_name(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == s) return static_cast<Feature>(i);
  throw UsageError("unknown feature '" + std::string(s) + "'");
}

std::vector<Feature> parse_feature_list(std::string_view csv) {
  std::vector<Feature> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto pos = csv.find(',', start);
    auto tok = csv.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (!tok.empty()) out.push_back(feature_from_name(tok));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (out.empty()) throw UsageError("empty feature list");
  return out;
}

std::string join_feature_list(const std::vector<Feature>& fs) {
  std::string out;
  for (auto f : fs) {
    if (!out.empty()) out.push_back(',');
    out += name(f);
  }
  return out;
}

void EncodingConfig::validate() const {
  if (features.empty()) throw UsageError("feature subset must be non-empty");
  if (l1 % 2 != 0 || l2 % 2 != 0 || l2 == 0) throw UsageError("l1 and l2 must be even and positive");
  if (l2 >= l1) throw UsageError("l2 must be smaller than l1");
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = i + 1; j < features.size(); ++j)
      if (features[i] == features[j]) throw UsageError("duplicate feature in subset");
}

double wrap_heading_delta(double from_deg, double to_deg) {
  double d = std::fmod(to_deg - from_deg, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

PointFeatures derive_point_features(const Trajectory& t) {
  const auto& pts = t.points();
  const std::size_t n = pts.size();
  PointFeatures pf;
  pf.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = pts[i];
    auto& v = pf.values[i];
    v.fill(kMissing);
    v[static_cast<std::size_t>(Feature::Speed)] = opt(p.speed);
    v[static_cast<std::size_t>(Feature::Accel)] = opt(p.accel);
    v[static_cast<std::size_t>(Feature::Rpm)] = opt(p.rpm);
    v[static_cast<std::size_t>(Feature::Head)] = p.head ? static_cast<double>(*p.head) : kMissing;
    v[static_cast<std::size_t>(Feature::AclX)] = opt(p.acl_x);
    v[static_cast<std::size_t>(Feature::AclY)] = opt(p.acl_y);
    v[static_cast<std::size_t>(Feature::AclZ)] = opt(p.acl_z);
  }

  constexpr auto kGs = static_cast<std::size_t>(Feature::GpsSpeed);
  constexpr auto kGa = static_cast<std::size_t>(Feature::GpsAccel);
  constexpr auto kAs = static_cast<std::size_t>(Feature::AngularSpeed);
  for (std::size_t i = 1; i < n; ++i) {
    const double dt = static_cast<double>(pts[i].t - pts[i - 1].t);
    if (!(dt > 0.0)) throw DataError("non-increasing timestamp in " + t.id());
    const auto &a = pts[i - 1], &b = pts[i];
    if (a.lat && a.lng && b.lat && b.lng) {
      pf.values[i][kGs] = geo::haversine({*a.lat, *a.lng}, {*b.lat, *b.lng}) / dt;
    }
    if (a.head && b.head) {
      pf.values[i][kAs] = wrap_heading_delta(*a.head, *b.head) / dt;
    }
    if (i >= 2) {
      pf.values[i][kGa] = (pf.values[i][kGs] - pf.values[i - 1][kGs]) / dt;
    }
  }
  if (n >= 2) {
    pf.values[0][kGs] = pf.values[1][kGs];
    pf.values[0][kAs] = pf.values[1][kAs];
  }
  if (n >= 3) {
    pf.values[0][kGa] = pf.values[1][kGa] = pf.values[2][kGa];
  } else {
    // No second difference exists for a two-point trip.
    for (auto& v : pf.values) v[kGa] = std::isnan(v[kGs]) ? kMissing : 0.0;
  }
  return pf;
}

std::vector<Window> segment(std::size_t n_points, const EncodingConfig& cfg) {
  std::vector<Window> out;
  if (n_points < cfg.l1) return out;
  const std::size_t k = 2 * n_points / cfg.l1 - 1;
  const std::size_t shift = cfg.l1 / 2;
  for (std::size_t i = 0; i < k; ++i) out.push_back({i * shift, cfg.l1});
  return out;
}

Matrix basic_feature_map(const PointFeatures& pf, Window w, const EncodingConfig& cfg) {
  if (w.start + w.length > pf.values.size()) throw DataError("window exceeds trajectory");
  Matrix m(cfg.features.size(), w.length);
  for (std::size_t r = 0; r < cfg.features.size(); ++r) {
    for (std::size_t c = 0; c < w.length; ++c) {
      const double v = pf.at(w.start + c, cfg.features[r]);
      if (std::isnan(v)) {
        throw DataError("missing value for feature " + std::string(name(cfg.features[r])) +
                        " at point " + std::to_string(w.start + c));
      }
      m(r, c) = v;
    }
  }
  return m;
}

std::array<double, kStatCount> frame_statistics(std::vector<double> values) {
  if (values.empty()) throw DataError("empty frame");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  auto pct = [&](double q) {
    const double pos = q * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
  };
  return {mean, values.front(), values.back(), pct(0.25), pct(0.5), pct(0.75), std::sqrt(var)};
}

Matrix aggregate_feature_map(const Matrix& basic, const EncodingConfig& cfg) {
  if (basic.rows != cfg.features.size() || basic.cols != cfg.l1) {
    throw ShapeError("basic map is " + std::to_string(basic.rows) + "x" +
                     std::to_string(basic.cols) + ", expected " +
                     std::to_string(cfg.features.size()) + "x" + std::to_string(cfg.l1));
  }
  const std::size_t frames = cfg.cols();
  const std::size_t shift = cfg.l2 / 2;
  Matrix out(cfg.rows(), frames);
  std::vector<double> buf(cfg.l2);
  for (std::size_t f = 0; f < basic.rows; ++f) {
    for (std::size_t k = 0; k < frames; ++k) {
      for (std::size_t c = 0; c < cfg.l2; ++c) {
        const std::size_t col = k * shift + c;
        buf[c] = col < basic.cols ? basic(f, col) : 0.0;
      }
      const auto st = frame_statistics(buf);
      for (std::size_t s = 0; s < kStatCount; ++s) out(kStatCount * f + s, k) = st[s];
    }
  }
  return out;
}

std::vector<SegmentRecord> encode_trajectory(const Trajectory& t, const EncodingConfig& cfg) {
  cfg.validate();
  const auto pf = derive_point_features(t);
  std::vector<SegmentRecord> out;
  std::uint32_t idx = 0;
  for (const auto& w : segment(t.size(), cfg)) {
    out.push_back({t.id(), t.driver(), idx++, aggregate_feature_map(basic_feature_map(pf, w, cfg), cfg)});
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'D', 'P', 'F', 'M'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated segment file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

void put_str(std::ostream& out, std::string_view s) {
  if (s.size() > 0xffff) throw DataError("identifier too long");
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  const auto len = get_le<std::uint16_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != len) throw DataError("truncated segment file");
  return s;
}

}  // namespace

void write_segments(std::ostream& out, const EncodingConfig& cfg,
                    const std::vector<SegmentRecord>& records) {
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(cfg.features.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.rows()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.cols()));
  for (auto f : cfg.features) put_str(out, name(f));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.l1));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.l2));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.map.rows != cfg.rows() || r.map.cols != cfg.cols()) throw ShapeError("segment map shape mismatch");
    put_str(out, r.trajectory_id);
    put_str(out, r.driver_id);
    put_le<std::uint32_t>(out, r.segment_index);
    for (double v : r.map.data) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

SegmentFile read_segments(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError("not a DPFM file");
  if (get_le<std::uint16_t>(in) != kVersion) throw DataError("unsupported DPFM version");
  SegmentFile file;
  const auto nf = get_le<std::uint16_t>(in);
  const auto rows = get_le<std::uint32_t>(in);
  const auto cols = get_le<std::uint32_t>(in);
  file.cfg.features.clear();
  for (std::uint16_t i = 0; i < nf; ++i) file.cfg.features.push_back(feature_from_name(get_str(in)));
  file.cfg.l1 = get_le<std::uint32_t>(in);
  file.cfg.l2 = get_le<std::uint32_t>(in);
  file.cfg.validate();
  if (rows != file.cfg.rows() || cols != file.cfg.cols()) throw DataError("DPFM header dimensions inconsistent");
  const auto count = get_le<std::uint32_t>(in);
  file.records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    SegmentRecord r;
    r.trajectory_id = get_str(in);
    r.driver_id = get_str(in);
    r.segment_index = get_le<std::uint32_t>(in);
    r.map = Matrix(rows, cols);
    for (auto& v : r.map.data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    file.records.push_back(std::move(r));
  }
  return file;
}

}  // namespace dstyle::features
