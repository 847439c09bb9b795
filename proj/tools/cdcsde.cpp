// Experiment runner: `run`, `ablate`, `lag-sweep`, `report <dir>`.
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include "cdcsde/cdcsde.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace cdcsde;
using experiment::json;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> parse_ints(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (const auto& t : split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw experiment::ConfigError(what + ": '" + t + "' is not an integer");
    }
  }
  return out;
}

struct Flags {
  std::string config, stream, methods, seeds, lag, out, csv, scenario, signals;
  long samples = 0;
  int warm_start = 0, threads = -1;
  std::vector<std::string> subsets, policies;
  bool no_predictions = false;
};

// Flags override the config file; both go through the same strict parser.
experiment::ExperimentConfig resolve(const Flags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw experiment::ConfigError("--config: cannot open '" + f.config + "'");
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw experiment::ConfigError("--config: " + std::string(e.what()));
    }
  }
  json patch = json::object();
  if (!f.stream.empty()) patch["stream"]["generator"] = f.stream;
  if (!f.csv.empty()) patch["stream"]["csv_path"] = f.csv;
  if (f.samples > 0) patch["stream"]["total_samples"] = f.samples;
  if (!f.scenario.empty()) patch["stream"]["composite"]["scenario"] = f.scenario;
  if (!f.methods.empty()) patch["methods"] = split(f.methods, ',');
  if (!f.seeds.empty()) {
    json seeds = json::array();
    for (int s : parse_ints(f.seeds, "--seeds")) {
      if (s < 0) throw experiment::ConfigError("--seeds: seeds must be non-negative");
      seeds.push_back(s);
    }
    patch["seeds"] = seeds;
  }
  if (!f.lag.empty()) patch["lag"] = experiment::lag_to_json(experiment::parse_lag(f.lag));
  if (!f.signals.empty()) patch["signals"]["included"] = parse_ints(f.signals, "--signals");
  if (f.warm_start > 0) patch["training"]["warm_start_batches"] = f.warm_start;
  if (f.threads >= 0) patch["threads"] = f.threads;
  if (f.no_predictions) patch["log_predictions"] = false;
  if (!f.out.empty()) patch["output_dir"] = f.out;
  if (!f.subsets.empty()) {
    json subs = json::array();
    for (const auto& s : f.subsets) subs.push_back(parse_ints(s, "--subset"));
    patch["ablation"]["subsets"] = subs;
  }
  if (!f.policies.empty()) {
    json ps = json::array();
    for (const auto& p : f.policies) ps.push_back(experiment::lag_to_json(experiment::parse_lag(p)));
    patch["lag_sweep"]["policies"] = ps;
  }
  // A generator switch must not inherit the file's sample count meant for another generator.
  if (patch.contains("stream") && patch["stream"].contains("generator") && j.contains("stream") && j["stream"].is_object() &&
      !patch["stream"].contains("total_samples"))
    j["stream"].erase("total_samples");
  j.merge_patch(patch);
  auto cfg = experiment::from_json(j);
  experiment::validate(cfg);
  return cfg;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("-c,--config", f.config, "JSON experiment config (flags override it)");
  app->add_option("--stream", f.stream, "sea | sine2 | stationary-gaussian | composite | csv");
  app->add_option("--csv", f.csv, "dataset for --stream csv");
  app->add_option("--samples", f.samples, "total stream samples");
  app->add_option("--scenario", f.scenario, "composite scenario");
  app->add_option("--seeds", f.seeds, "comma-separated seeds, e.g. 1,2,3");
  app->add_option("--lag", f.lag, "label lag: exp:<scale> or fixed:<l>");
  app->add_option("--signals", f.signals, "included signals, e.g. 1,2,3,4,5,6");
  app->add_option("--warm-start", f.warm_start, "warm-start batch count");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_flag("--no-predictions", f.no_predictions, "omit per-step predict events from the logs");
  app->add_option("-o,--out", f.out, "output directory");
}

void print(const experiment::GridResult& g, const std::string& dir) {
  std::cout << g.table;
  if (!dir.empty()) std::cout << "artifacts: " << dir << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming concept-drift detection experiments"};
  app.require_subcommand(1);
  Flags f;
  std::string report_dir;

  auto* run = app.add_subcommand("run", "run the method grid over seeds");
  add_common(run, f);
  run->add_option("--method", f.methods, "comma-separated: cdcsde,ddm,ph,ewma");

  auto* abl = app.add_subcommand("ablate", "run CDCSDE with signal subsets");
  add_common(abl, f);
  abl->add_option("--subset", f.subsets, "signal subset, e.g. 1,2 (repeatable)");

  auto* lag = app.add_subcommand("lag-sweep", "run the method grid across lag policies");
  add_common(lag, f);
  lag->add_option("--method", f.methods, "comma-separated: cdcsde,ddm,ph,ewma");
  lag->add_option("--policy", f.policies, "lag policy, e.g. exp:2 or fixed:4 (repeatable)");

  auto* rep = app.add_subcommand("report", "rebuild metrics and summary from run logs");
  rep->add_option("dir", report_dir, "experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rep->parsed()) {
      const auto g = experiment::report(report_dir);
      std::cout << g.table;
      return 0;
    }
    const auto cfg = resolve(f);
    if (run->parsed()) print(experiment::run_experiment(cfg), cfg.output_dir);
    if (abl->parsed()) print(experiment::ablate(cfg), cfg.output_dir);
    if (lag->parsed()) print(experiment::lag_sweep(cfg), cfg.output_dir);
    return 0;
  } catch (const experiment::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
