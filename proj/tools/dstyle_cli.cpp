// SPDX-License-Identifier: Apache-2.0
//
// dstyle: command-line front end for the driver-identification pipeline.
#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "dstyle/error.hpp"
#include "dstyle/pipeline.hpp"
#include "dstyle/util.hpp"

namespace {

using nlohmann::json;
namespace pl = dstyle::pipeline;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

template <class T>
void set_if(json& j, const char* section, const char* key, const std::optional<T>& v) {
  if (v) j[section][key] = *v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driver identification from vehicle telemetry"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string input;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool quiet = false;

  std::optional<std::size_t> drivers, trips_per_driver;
  std::optional<double> separation, min_minutes, max_minutes;
  std::optional<double> tau;
  std::optional<std::string> strategy;
  std::optional<double> nu, train_fraction;
  std::optional<std::string> thresholds;
  std::optional<std::size_t> n_trajectories, n_drivers;
  std::optional<std::size_t> l1, l2;
  std::optional<std::string> feature_list;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  bool ablation = false;
  bool eval_each_epoch = false;
  std::optional<std::string> grid_subsets;
  std::optional<std::size_t> grid_repeats;
  std::optional<std::size_t> res_subsets, drivers_per_subset;
  std::optional<double> damping, preference;
  std::optional<std::string> split;

  app.add_option("--config", config_path, "JSON config file; flags override it")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Workspace directory for artifacts")->capture_default_str();
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--threads", threads, "Worker threads for stages that support them");
  app.add_flag("--quiet", quiet, "Suppress progress lines");

  app.add_option("--input", input, "ingest: telemetry CSV (default: workspace raw.csv)");
  app.add_option("--drivers", drivers, "synth: number of drivers");
  app.add_option("--trajectories-per-driver", trips_per_driver, "synth: trajectories per driver");
  app.add_option("--separation", separation, "synth: style separation in [0,1]");
  app.add_option("--min-minutes", min_minutes, "synth: shortest retained duration");
  app.add_option("--max-minutes", max_minutes, "synth: longest retained duration");
  app.add_option("--tau", tau, "similarity: match radius in meters");
  app.add_option("--strategy", strategy, "sample: threshold, stratified or random");
  app.add_option("--nu", nu, "sample: similarity threshold");
  app.add_option("--thresholds", thresholds, "sample: stratified bucket edges, comma separated");
  app.add_option("--n-trajectories", n_trajectories, "sample: trajectories per driver (N)");
  app.add_option("--n-drivers", n_drivers, "sample: drivers (M)");
  app.add_option("--train-fraction", train_fraction, "sample: per-driver train share");
  app.add_option("--l1", l1, "encode: segment length");
  app.add_option("--l2", l2, "encode: frame width");
  app.add_option("--features", feature_list, "encode: feature list, e.g. speed,accel,rpm");
  app.add_option("--epochs", epochs, "train: epochs");
  app.add_option("--batch-size", batch_size, "train: mini-batch size");
  app.add_option("--lr", lr, "train: learning rate");
  app.add_flag("--ablation", ablation, "train: drop batch-norm and the residual input");
  app.add_flag("--eval-each-epoch", eval_each_epoch, "train: report test accuracy every epoch");
  app.add_option("--subsets", grid_subsets, "feature-grid: subsets separated by ';'");
  app.add_option("--repeats", grid_repeats, "feature-grid: training runs averaged per subset");
  app.add_option("--resolve-subsets", res_subsets, "resolve: number of random driver subsets");
  app.add_option("--drivers-per-subset", drivers_per_subset, "resolve: drivers per subset");
  app.add_option("--damping", damping, "resolve: affinity propagation damping");
  app.add_option("--preference", preference, "resolve: affinity propagation preference");
  app.add_option("--split", split, "export-latents: train, test or all");

  const std::map<std::string, std::string> about{
      {"synth", "generate synthetic drivers and trips into raw.csv"},
      {"ingest", "parse and validate telemetry CSV"},
      {"preprocess", "trim trip ends and apply duration bounds"},
      {"similarity", "pairwise spatial similarity per driver"},
      {"sample", "build a train/test dataset manifest"},
      {"encode", "encode manifest trips into aggregate feature maps"},
      {"train", "train the classifier on the manifest's train split"},
      {"eval", "segment and trip accuracy on the test split"},
      {"feature-grid", "train and evaluate one model per feature subset"},
      {"resolve", "cluster test-trip embeddings over random driver subsets"},
      {"export-latents", "write trip embeddings as CSV"},
  };
  for (const auto& name : pl::stage_names()) app.add_subcommand(name, about.at(name))->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    json overrides = json::object();
    if (seed) overrides["seed"] = *seed;
    if (threads) overrides["threads"] = *threads;
    set_if(overrides, "synth", "n_drivers", drivers);
    set_if(overrides, "synth", "n_trajectories_per_driver", trips_per_driver);
    set_if(overrides, "synth", "separation", separation);
    set_if(overrides, "synth", "min_minutes", min_minutes);
    set_if(overrides, "synth", "max_minutes", max_minutes);
    set_if(overrides, "similarity", "tau", tau);
    set_if(overrides, "sample", "strategy", strategy);
    set_if(overrides, "sample", "nu", nu);
    set_if(overrides, "sample", "n_trajectories", n_trajectories);
    set_if(overrides, "sample", "n_drivers", n_drivers);
    set_if(overrides, "sample", "train_fraction", train_fraction);
    if (thresholds) {
      json edges = json::array();
      for (const auto& s : split_on(*thresholds, ',')) {
        const auto v = dstyle::parse_double(s);
        if (!v) throw dstyle::UsageError("bad threshold '" + s + "'");
        edges.push_back(*v);
      }
      overrides["sample"]["thresholds"] = edges;
    }
    set_if(overrides, "encode", "l1", l1);
    set_if(overrides, "encode", "l2", l2);
    set_if(overrides, "encode", "features", feature_list);
    set_if(overrides, "train", "epochs", epochs);
    set_if(overrides, "train", "batch_size", batch_size);
    set_if(overrides, "train", "lr", lr);
    if (ablation) overrides["train"]["ablation"] = true;
    if (eval_each_epoch) overrides["train"]["evaluate_each_epoch"] = true;
    if (grid_subsets) overrides["feature_grid"]["subsets"] = split_on(*grid_subsets, ';');
    set_if(overrides, "feature_grid", "repeats", grid_repeats);
    set_if(overrides, "resolve", "subsets", res_subsets);
    set_if(overrides, "resolve", "drivers_per_subset", drivers_per_subset);
    set_if(overrides, "resolve", "damping", damping);
    set_if(overrides, "resolve", "preference", preference);
    set_if(overrides, "export_latents", "split", split);

    json file_cfg;
    if (!config_path.empty()) {
      try {
        file_cfg = json::parse(dstyle::read_file(config_path));
      } catch (const json::exception& e) {
        throw dstyle::UsageError(std::string("config file: ") + e.what());
      }
    }

    pl::StageContext ctx;
    ctx.workspace = out_dir;
    ctx.config = pl::merge_config(file_cfg, overrides);
    ctx.input = input;
    ctx.log = quiet ? nullptr : &std::cerr;
    pl::run_stage(app.get_subcommands().front()->get_name(), ctx);
    return kOk;
  } catch (const dstyle::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const dstyle::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const dstyle::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
}
