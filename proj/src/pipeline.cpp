// SPDX-License-Identifier: Apache-2.0
#include "dstyle/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "dstyle/dcrnn.hpp"
#include "dstyle/error.hpp"
#include "dstyle/features.hpp"
#include "dstyle/geo_similarity.hpp"
#include "dstyle/resolution.hpp"
#include "dstyle/sampling.hpp"
#include "dstyle/synth.hpp"
#include "dstyle/train_eval.hpp"
#include "dstyle/trajectory.hpp"
#include "dstyle/util.hpp"

namespace dstyle::pipeline {

using nlohmann::json;

namespace {

constexpr const char* kRunsDir = "runs";

struct Stage {
  std::string name;
  void (*fn)(const StageContext&, class Recorder&);
};

/// Collects input/output hashes for the run manifest.
class Recorder {
 public:
  Recorder(const StageContext& ctx, std::string stage) : ctx_(ctx), stage_(std::move(stage)) {}

  /// Verifies and records a workspace artifact produced by an earlier stage.
  fs::path input(const std::string& name) {
    inputs_.push_back({{"name", name}, {"sha256", verify_artifact(ctx_.workspace, name)}});
    return ctx_.workspace / name;
  }
  /// Records an external file that no stage produced.
  fs::path external(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("missing input " + path.string());
    inputs_.push_back({{"name", path.filename().string()}, {"sha256", sha256_file(path)}});
    return path;
  }
  void output(const std::string& name, std::string_view bytes) {
    write_file(ctx_.workspace / name, bytes);
    outputs_.push_back({{"name", name}, {"sha256", sha256_hex(bytes)}});
  }
  void finish() const {
    const auto root = ctx_.config.at("seed").get<std::uint64_t>();
    json run = {{"stage", stage_},
                {"seed", root},
                {"stage_seed", derive_seed(root, stage_)},
                {"config", ctx_.config},
                {"inputs", inputs_},
                {"outputs", outputs_}};
    write_file(ctx_.workspace / kRunsDir / (stage_ + ".json"), run.dump(2) + "\n");
  }
  std::uint64_t stage_seed() const { return derive_seed(ctx_.config.at("seed").get<std::uint64_t>(), stage_); }
  void log(const std::string& line) const {
    if (ctx_.log) *ctx_.log << stage_ << ": " << line << "\n";
  }

 private:
  const StageContext& ctx_;
  std::string stage_;
  json inputs_ = json::array();
  json outputs_ = json::array();
};

const json& section(const StageContext& ctx, const char* name) { return ctx.config.at(name); }

unsigned threads_of(const StageContext& ctx) { return ctx.config.at("threads").get<unsigned>(); }

std::vector<Trajectory> read_csv(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return parse_trajectories(in);
}

std::string csv_text(const std::vector<Trajectory>& ts) {
  std::ostringstream out;
  write_trajectories(out, ts);
  return out.str();
}

PreprocessConfig preprocess_config(const json& j) {
  PreprocessConfig c;
  c.trim_seconds = j.at("trim_seconds").get<std::int64_t>();
  c.min_duration = j.at("min_duration").get<std::int64_t>();
  c.max_duration = j.at("max_duration").get<std::int64_t>();
  c.drop_missing = j.at("drop_missing").get<bool>();
  c.validate();
  return c;
}

features::EncodingConfig encoding_config(const json& j) {
  features::EncodingConfig c;
  c.l1 = j.at("l1").get<std::size_t>();
  c.l2 = j.at("l2").get<std::size_t>();
  c.features = features::parse_feature_list(j.at("features").get<std::string>());
  c.validate();
  return c;
}

train::TrainConfig train_config(const json& j, std::uint64_t seed) {
  train::TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.optimizer.learning_rate = j.at("lr").get<double>();
  c.optimizer.momentum = j.at("momentum").get<double>();
  c.optimizer.epsilon = j.at("eps").get<double>();
  c.optimizer.rho = j.at("rho").get<double>();
  c.ablation_no_bn_residual = j.at("ablation").get<bool>();
  c.evaluate_each_epoch = j.at("evaluate_each_epoch").get<bool>();
  c.seed = seed;
  c.validate();
  return c;
}

// ---- similarity index serialisation ----

std::string similarity_to_json(const sampling::SimilarityIndex& index, double tau) {
  json drivers = json::object();
  for (const auto& [driver, m] : index) drivers[driver] = {{"ids", m.trajectory_ids}, {"scores", m.scores}};
  return json{{"tau", tau}, {"drivers", drivers}}.dump() + "\n";
}

sampling::SimilarityIndex similarity_from_json(const std::string& text) {
  sampling::SimilarityIndex index;
  try {
    const auto j = json::parse(text);
    for (const auto& [driver, m] : j.at("drivers").items()) {
      geo::SimilarityMatrix sm;
      sm.trajectory_ids = m.at("ids").get<std::vector<std::string>>();
      sm.scores = m.at("scores").get<std::vector<double>>();
      if (sm.scores.size() != sm.size() * sm.size()) throw DataError("similarity matrix of " + driver + " is not square");
      index.emplace(driver, std::move(sm));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed similarity file: ") + e.what());
  }
  return index;
}

// ---- model helpers ----

features::SegmentFile load_segments(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return features::read_segments(in);
}

sampling::DatasetManifest load_manifest(const fs::path& p) { return sampling::manifest_from_json(read_file(p)); }

dcrnn::Dcrnn load_model(Recorder& rec) {
  const auto arch = dcrnn::ArchitectureConfig::from_json(read_file(rec.input(artifact::kArchitecture)));
  dcrnn::Dcrnn model(arch, 0);
  std::ifstream in(rec.input(artifact::kModel), std::ios::binary);
  model.load(in);
  return model;
}

// ---- stages ----

void stage_synth(const StageContext& ctx, Recorder& rec) {
  const auto& s = section(ctx, "synth");
  synth::SynthConfig cfg;
  cfg.n_drivers = s.at("n_drivers").get<std::size_t>();
  cfg.n_trajectories_per_driver = s.at("n_trajectories_per_driver").get<std::size_t>();
  cfg.min_minutes = s.at("min_minutes").get<double>();
  cfg.max_minutes = s.at("max_minutes").get<double>();
  cfg.separation = s.at("separation").get<double>();
  cfg.trim_seconds = section(ctx, "preprocess").at("trim_seconds").get<std::int64_t>();
  cfg.seed = rec.stage_seed();
  const auto ds = synth::generate_dataset(cfg);
  rec.output(artifact::kRaw, csv_text(ds.trajectories));
  rec.output(artifact::kProfiles, synth::profiles_to_json(ds.profiles));
  rec.log(std::to_string(ds.trajectories.size()) + " trajectories from " + std::to_string(cfg.n_drivers) + " drivers");
}

void stage_ingest(const StageContext& ctx, Recorder& rec) {
  const fs::path src = ctx.input.empty() ? rec.input(artifact::kRaw) : rec.external(ctx.input);
  const auto ts = read_csv(src);
  rec.output(artifact::kTrajectories, csv_text(ts));
  rec.log(std::to_string(ts.size()) + " trajectories");
}

void stage_preprocess(const StageContext& ctx, Recorder& rec) {
  const auto cfg = preprocess_config(section(ctx, "preprocess"));
  const auto ts = read_csv(rec.input(artifact::kTrajectories));
  std::vector<Trajectory> kept;
  json dropped = json::array();
  for (const auto& t : ts) {
    if (auto p = preprocess(t, cfg)) {
      kept.push_back(std::move(*p));
    } else {
      dropped.push_back(t.id());
    }
  }
  if (kept.empty()) throw DataError("preprocessing removed every trajectory");
  rec.output(artifact::kClean, csv_text(kept));
  json report = {{"input", ts.size()}, {"kept", kept.size()}, {"dropped", dropped}};
  rec.output(artifact::kPreprocessReport, report.dump(2) + "\n");
  rec.log("kept " + std::to_string(kept.size()) + " of " + std::to_string(ts.size()));
}

void stage_similarity(const StageContext& ctx, Recorder& rec) {
  geo::MatchThreshold thr;
  thr.tau = section(ctx, "similarity").at("tau").get<double>();
  thr.validate();
  const auto ts = read_csv(rec.input(artifact::kClean));
  std::map<std::string, std::vector<Trajectory>> by_driver;
  for (const auto& t : ts) by_driver[t.driver()].push_back(t);
  sampling::SimilarityIndex index;
  for (const auto& [driver, trips] : by_driver) {
    index.emplace(driver, geo::pairwise_similarity(trips, thr, threads_of(ctx)));
  }
  rec.output(artifact::kSimilarity, similarity_to_json(index, thr.tau));
  rec.log(std::to_string(index.size()) + " drivers");
}

void stage_sample(const StageContext& ctx, Recorder& rec) {
  const auto& s = section(ctx, "sample");
  const auto strategy = sampling::strategy_from_string(s.at("strategy").get<std::string>());
  sampling::SamplingParams params;
  params.nu = s.at("nu").get<double>();
  params.thresholds = s.at("thresholds").get<std::vector<double>>();
  params.n_trajectories = s.at("n_trajectories").get<std::size_t>();
  params.n_drivers = s.at("n_drivers").get<std::size_t>();
  params.seed = rec.stage_seed();
  params.validate(strategy);
  const double train_fraction = s.at("train_fraction").get<double>();

  const auto index = similarity_from_json(read_file(rec.input(artifact::kSimilarity)));
  sampling::DatasetManifest m;
  switch (strategy) {
    case sampling::Strategy::Threshold: m = sampling::threshold_sample(index, params); break;
    case sampling::Strategy::Stratified: m = sampling::stratified_sample(index, params); break;
    case sampling::Strategy::Random: m = sampling::random_sample(index, params); break;
  }
  m = sampling::split_manifest(std::move(m), train_fraction, derive_seed(rec.stage_seed(), "split"));
  rec.output(artifact::kManifest, sampling::to_json(m));

  const double max_sim = sampling::max_intra_driver_similarity(m, index);
  json report = {{"name", m.name},
                 {"entries", m.entries.size()},
                 {"drivers", m.drivers().size()},
                 {"p50", m.stats.p50},
                 {"p90", m.stats.p90},
                 {"max", m.stats.max},
                 {"max_intra_driver_similarity", max_sim}};
  if (strategy == sampling::Strategy::Threshold) report["below_nu"] = max_sim < params.nu;
  rec.output(artifact::kSampleReport, report.dump(2) + "\n");
  rec.log(m.name + " with " + std::to_string(m.entries.size()) + " trajectories");
}

void stage_encode(const StageContext& ctx, Recorder& rec) {
  const auto enc = encoding_config(section(ctx, "encode"));
  const auto ts = read_csv(rec.input(artifact::kClean));
  const auto m = load_manifest(rec.input(artifact::kManifest));
  std::map<std::string, const Trajectory*> by_id;
  for (const auto& t : ts) by_id[t.id()] = &t;
  std::vector<features::SegmentRecord> records;
  for (const auto& e : m.entries) {
    const auto it = by_id.find(e.trajectory_id);
    if (it == by_id.end()) throw DataError("manifest trajectory " + e.trajectory_id + " is not in " + artifact::kClean);
    auto segs = features::encode_trajectory(*it->second, enc);
    if (segs.empty()) throw DataError("trajectory " + e.trajectory_id + " is shorter than one segment");
    for (auto& r : segs) records.push_back(std::move(r));
  }
  std::ostringstream out;
  features::write_segments(out, enc, records);
  rec.output(artifact::kSegments, out.str());
  rec.log(std::to_string(records.size()) + " segments");
}

void stage_train(const StageContext& ctx, Recorder& rec) {
  const auto& s = section(ctx, "train");
  const auto cfg = train_config(s, rec.stage_seed());
  const auto segs = load_segments(rec.input(artifact::kSegments));
  const auto m = load_manifest(rec.input(artifact::kManifest));
  const auto data = train::label_segments(m, segs.records);
  dcrnn::Dcrnn model(train::architecture_for(segs.cfg, data.drivers.size(), cfg.ablation_no_bn_residual),
                     derive_seed(cfg.seed, "init"));
  const auto history = train::train(model, data, cfg, [&](const train::EpochRecord& r) {
    std::string line = "epoch " + std::to_string(r.epoch) + " loss " + format_double(r.loss);
    if (r.traj_accuracy) line += " traj_acc " + format_double(*r.traj_accuracy);
    rec.log(line);
  });
  std::ostringstream blob;
  model.save(blob);
  rec.output(artifact::kArchitecture, model.config().to_json());
  rec.output(artifact::kModel, blob.str());
  rec.output(artifact::kHistory, train::history_to_json(history));
}

void stage_eval(const StageContext&, Recorder& rec) {
  auto model = load_model(rec);
  const auto segs = load_segments(rec.input(artifact::kSegments));
  const auto m = load_manifest(rec.input(artifact::kManifest));
  const auto data = train::label_segments(m, segs.records);
  if (data.drivers.size() != model.config().num_drivers) throw DataError("model and manifest disagree on driver count");
  const auto r = train::evaluate(model, data);
  json report = {{"segment_accuracy", r.seg_accuracy},
                 {"trajectory_accuracy", r.traj_accuracy},
                 {"n_segments", r.n_segments},
                 {"n_trajectories", r.n_trajectories},
                 {"n_drivers", data.drivers.size()},
                 {"chance", 1.0 / static_cast<double>(data.drivers.size())}};
  rec.output(artifact::kEvalReport, report.dump(2) + "\n");
  rec.log("trajectory accuracy " + format_double(r.traj_accuracy));
}

void stage_feature_grid(const StageContext& ctx, Recorder& rec) {
  const auto base = encoding_config(section(ctx, "encode"));
  const auto cfg = train_config(section(ctx, "train"), rec.stage_seed());
  std::vector<std::vector<features::Feature>> subsets;
  for (const auto& s : section(ctx, "feature_grid").at("subsets")) {
    subsets.push_back(features::parse_feature_list(s.get<std::string>()));
  }
  if (subsets.empty()) throw UsageError("feature-grid needs at least one subset");
  const auto ts = read_csv(rec.input(artifact::kClean));
  const auto m = load_manifest(rec.input(artifact::kManifest));
  const auto repeats = section(ctx, "feature_grid").at("repeats").get<std::size_t>();
  if (repeats == 0) throw UsageError("feature-grid repeats must be positive");
  const auto rows = train::feature_subset_experiment(ts, m, subsets, base, cfg, repeats);
  rec.output(artifact::kFeatureGrid, train::subset_report_csv(rows));
  rec.log(std::to_string(rows.size()) + " subsets");
}

train::LabeledSegments labeled_for_model(Recorder& rec, features::SegmentFile& segs, const dcrnn::Dcrnn& model) {
  segs = load_segments(rec.input(artifact::kSegments));
  const auto m = load_manifest(rec.input(artifact::kManifest));
  auto data = train::label_segments(m, segs.records);
  if (data.drivers.size() != model.config().num_drivers) throw DataError("model and manifest disagree on driver count");
  return data;
}

void stage_resolve(const StageContext& ctx, Recorder& rec) {
  const auto& s = section(ctx, "resolve");
  resolution::ResolutionConfig cfg;
  cfg.subsets = s.at("subsets").get<std::size_t>();
  cfg.drivers_per_subset = s.at("drivers_per_subset").get<std::size_t>();
  cfg.ap.damping = s.at("damping").get<double>();
  cfg.ap.preference =
      s.at("preference").is_null() ? std::numeric_limits<double>::quiet_NaN() : s.at("preference").get<double>();
  cfg.ap.max_iter = s.at("max_iter").get<std::size_t>();
  cfg.ap.convergence_window = s.at("convergence_window").get<std::size_t>();
  cfg.ap.validate();
  cfg.seed = rec.stage_seed();
  cfg.threads = threads_of(ctx);
  auto model = load_model(rec);
  features::SegmentFile segs;
  const auto data = labeled_for_model(rec, segs, model);
  const auto report = resolution::resolution_experiment(resolution::test_latents(model, data), cfg);
  rec.output(artifact::kResolution, report.to_json());
  rec.log("average AMI " + format_double(report.average_ami) + ", average EE " + format_double(report.average_ee));
}

void stage_export_latents(const StageContext& ctx, Recorder& rec) {
  const auto split = section(ctx, "export_latents").at("split").get<std::string>();
  if (split != "train" && split != "test" && split != "all") throw UsageError("split must be train, test or all");
  auto model = load_model(rec);
  features::SegmentFile segs;
  const auto data = labeled_for_model(rec, segs, model);
  std::vector<resolution::LabeledLatent> latents;
  if (split != "test") latents = resolution::train_latents(model, data);
  if (split != "train") {
    auto t = resolution::test_latents(model, data);
    latents.insert(latents.end(), t.begin(), t.end());
  }
  rec.output(artifact::kLatents, resolution::latents_csv(latents));
  rec.log(std::to_string(latents.size()) + " latent vectors");
}

const std::vector<Stage>& stages() {
  static const std::vector<Stage> all = {
      {"synth", stage_synth},          {"ingest", stage_ingest},     {"preprocess", stage_preprocess},
      {"similarity", stage_similarity}, {"sample", stage_sample},     {"encode", stage_encode},
      {"train", stage_train},          {"eval", stage_eval},         {"feature-grid", stage_feature_grid},
      {"resolve", stage_resolve},      {"export-latents", stage_export_latents},
  };
  return all;
}

void check_keys(const json& defaults, const json& given, const std::string& path) {
  if (!given.is_object()) throw UsageError("config" + (path.empty() ? "" : " key " + path) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw UsageError("unknown config key '" + full + "'");
    if (defaults.at(key).is_object()) check_keys(defaults.at(key), value, full);
  }
}

void merge_into(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : stages()) n.push_back(s.name);
    return n;
  }();
  return names;
}

json default_config() {
  return {
      {"seed", 0},
      {"threads", 1},
      {"synth",
       {{"n_drivers", 10}, {"n_trajectories_per_driver", 40}, {"min_minutes", 12.0}, {"max_minutes", 25.0},
        {"separation", 1.0}}},
      {"preprocess", {{"trim_seconds", 120}, {"min_duration", 600}, {"max_duration", 1800}, {"drop_missing", true}}},
      {"similarity", {{"tau", 100.0}}},
      {"sample",
       {{"strategy", "threshold"},
        {"nu", 0.2},
        {"thresholds", {0.2, 0.25, 0.3}},
        {"n_trajectories", 50},
        {"n_drivers", 50},
        {"train_fraction", 0.85}}},
      {"encode", {{"l1", 256}, {"l2", 4}, {"features", "speed,accel,rpm"}}},
      {"train",
       {{"epochs", 150},
        {"batch_size", 256},
        {"lr", 5e-5},
        {"momentum", 0.9},
        {"eps", 1e-6},
        {"rho", 0.9},
        {"ablation", false},
        {"evaluate_each_epoch", false}}},
      {"feature_grid", {{"subsets", {"speed,accel,rpm", "speed,accel", "rpm"}}, {"repeats", 1}}},
      {"resolve",
       {{"subsets", 100},
        {"drivers_per_subset", 10},
        {"damping", 0.5},
        {"preference", nullptr},
        {"max_iter", 200},
        {"convergence_window", 15}}},
      {"export_latents", {{"split", "test"}}},
  };
}

json merge_config(const json& file_config, const json& overrides) {
  json cfg = default_config();
  for (const json* layer : {&file_config, &overrides}) {
    if (layer->is_null()) continue;
    check_keys(cfg, *layer, "");
    merge_into(cfg, *layer);
  }
  return cfg;
}

std::string verify_artifact(const fs::path& workspace, const std::string& name) {
  const fs::path path = workspace / name;
  if (!fs::exists(path)) throw DataError("missing input artifact " + path.string());
  const std::string actual = sha256_file(path);
  const fs::path runs = workspace / kRunsDir;
  if (fs::is_directory(runs)) {
    for (const auto& stage : stage_names()) {
      const fs::path record = runs / (stage + ".json");
      if (!fs::exists(record)) continue;
      json run;
      try {
        run = json::parse(read_file(record));
      } catch (const json::exception& e) {
        throw DataError("malformed run record " + record.string() + ": " + e.what());
      }
      for (const auto& out : run.value("outputs", json::array())) {
        if (out.value("name", "") != name) continue;
        const auto expected = out.value("sha256", "");
        if (expected != actual) {
          throw DataError("hash mismatch for " + path.string() + ": recorded by " + stage + " as " + expected +
                          ", found " + actual);
        }
        return actual;
      }
    }
  }
  throw DataError("no run record lists " + name + " as an output; re-run the producing stage");
}

void run_stage(const std::string& stage, const StageContext& ctx) {
  for (const auto& s : stages()) {
    if (s.name != stage) continue;
    fs::create_directories(ctx.workspace / kRunsDir);
    Recorder rec(ctx, stage);
    s.fn(ctx, rec);
    rec.finish();
    return;
  }
  throw UsageError("unknown stage '" + stage + "'");
}

}  // namespace dstyle::pipeline
