#pragma once

// Experiment grids (methods x seeds, signal subsets, lag policies) run as
// independent sessions in parallel. Every run writes a JSONL event log that
// carries everything the summary needs, so `report` can rebuild all tables
// from the logs alone.

#include "cdcsde/experiment/config.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cdcsde::experiment {

namespace fs = std::filesystem;

struct Job {
  int order = 0;      // position of the job's label in the summary
  std::string label;  // summary row
  serving::Method method = serving::Method::Cdcsde;
  LagPolicy lag;
  control::VoteRule vote;
  std::uint64_t seed = 0;
};

struct JobResult {
  Job job;
  evaluation::MetricSet metrics;
  double mean_accuracy = 0.0;
  std::vector<Step> alarms;
};

struct GridResult {
  std::vector<JobResult> runs;
  std::vector<std::pair<std::string, evaluation::Summary>> summary;  // label order
  std::string table;
};

// ---- single run -------------------------------------------------------------------

inline std::string log_name(const Job& j) {
  std::string s = j.label;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '+' || c == '.')) c = '_';
  return s + "__seed" + std::to_string(j.seed) + ".jsonl";
}

// The stream and the label lags depend only on the seed, so every method
// sees the identical stream and deliveries.
inline serving::RunReport run_job(const ExperimentConfig& cfg, const Job& job) {
  StreamSpec spec = cfg.stream;
  spec.seed = job.seed;
  const LabeledStream stream = make_stream(spec);
  LagPolicy lag = job.lag;
  lag.seed = job.seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL;
  serving::ServingConfig sc = cfg.serving;
  sc.method = job.method;
  sc.vote = job.vote;
  sc.seed = job.seed;
  return serving::run_stream(stream, lag, sc);
}

inline void write_log(const fs::path& path, const ExperimentConfig& cfg, const Job& job, const serving::RunReport& r) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write log '" + path.string() + "'");
  out << json{{"event", "run_start"},
              {"order", job.order},
              {"label", job.label},
              {"method", serving::to_string(job.method)},
              {"seed", job.seed},
              {"lag", lag_to_json(job.lag)},
              {"signals", included_signals(job.vote)},
              {"first_step", r.first_step},
              {"drift_truth", r.drift_truth}}
             .dump()
      << '\n';
  for (const auto& e : r.events) {
    if (!cfg.log_predictions && e.at("event") == "predict") continue;
    out << e.dump() << '\n';
  }
  out << json{{"event", "run_end"}, {"last_step", r.last_step}}.dump() << '\n';
  if (!out) throw Error("failed writing log '" + path.string() + "'");
}

// ---- log replay ---------------------------------------------------------------------

struct LoggedRun {
  int order = 0;
  std::string label;
  std::uint64_t seed = 0;
  Step first = 0, last = -1;
  std::vector<Step> truth;
  std::vector<Step> alarms;
  std::map<Step, double> accuracy;

  double mean_accuracy() const {
    if (accuracy.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, a] : accuracy) s += a;
    return s / static_cast<double>(accuracy.size());
  }
};

inline LoggedRun read_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read log '" + path.string() + "'");
  LoggedRun r;
  bool started = false, ended = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json e;
    try {
      e = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
    }
    const std::string ev = e.at("event").get<std::string>();
    if (ev == "run_start") {
      started = true;
      r.order = e.at("order").get<int>();
      r.label = e.at("label").get<std::string>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.first = e.at("first_step").get<Step>();
      r.truth = e.at("drift_truth").get<std::vector<Step>>();
    } else if (ev == "run_end") {
      ended = true;
      r.last = e.at("last_step").get<Step>();
    } else if (ev == "deliver") {
      const auto& p = e.at("payload");
      r.accuracy[p.at("for_step").get<Step>()] = p.at("accuracy").get<double>();
    } else if (ev == "drift") {
      r.alarms.push_back(e.at("step").get<Step>());
    }
  }
  if (!started || !ended) throw Error(path.string() + ": incomplete run log");
  return r;
}

// ---- grids ----------------------------------------------------------------------------

inline std::vector<std::pair<std::string, evaluation::Summary>> summarize_by_label(const std::vector<JobResult>& runs) {
  std::map<int, std::pair<std::string, std::vector<evaluation::MetricSet>>> groups;
  for (const auto& r : runs) {
    auto& g = groups[r.job.order];
    g.first = r.job.label;
    g.second.push_back(r.metrics);
  }
  std::vector<std::pair<std::string, evaluation::Summary>> out;
  for (const auto& [_, g] : groups) out.emplace_back(g.first, evaluation::summarize(g.second));
  return out;
}

inline void write_metrics(const fs::path& dir, const std::vector<JobResult>& runs) {
  std::map<int, std::vector<const JobResult*>> by_label;
  for (const auto& r : runs) by_label[r.job.order].push_back(&r);
  std::ofstream all(dir / "metrics.csv");
  all << evaluation::kMetricsCsvHeader << '\n';
  for (const auto& [_, rs] : by_label) {
    Job probe = rs.front()->job;
    std::string name = log_name(probe);
    name = name.substr(0, name.find("__seed"));
    std::ofstream one(dir / ("metrics_" + name + ".csv"));
    one << evaluation::kMetricsCsvHeader << '\n';
    for (const auto* r : rs) {
      const std::string row = evaluation::metrics_csv_row(r->job.label, r->job.seed, r->metrics);
      all << row << '\n';
      one << row << '\n';
    }
  }
}

// Runs every job (in parallel), writes logs/metrics/summary under `dir` when
// it is non-empty and returns the per-run metrics and the summary.
inline GridResult run_grid(const ExperimentConfig& cfg, std::vector<Job> jobs, const std::string& dir) {
  validate(cfg);
  if (!dir.empty()) fs::create_directories(fs::path(dir) / "logs");
  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        serving::RunReport r = run_job(cfg, jobs[i]);
        if (!dir.empty()) write_log(fs::path(dir) / "logs" / log_name(jobs[i]), cfg, jobs[i], r);
        results[i] = {jobs[i], evaluation::compute_metrics(r, cfg.attribution), r.mean_accuracy(), r.alarms};
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  unsigned n = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  GridResult g;
  g.runs = std::move(results);
  g.summary = summarize_by_label(g.runs);
  g.table = evaluation::summary_table(g.summary);
  if (!dir.empty()) {
    std::ofstream(fs::path(dir) / "config.json") << to_json(cfg).dump(2) << '\n';
    write_metrics(dir, g.runs);
    std::ofstream(fs::path(dir) / "summary.txt") << g.table;
  }
  return g;
}

inline std::vector<Job> method_jobs(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  int order = 0;
  for (auto m : cfg.methods) {
    for (auto s : cfg.seeds) jobs.push_back({order, serving::to_string(m), m, cfg.lag, cfg.serving.vote, s});
    ++order;
  }
  return jobs;
}

inline std::vector<Job> ablation_jobs(const ExperimentConfig& cfg) {
  if (cfg.ablation_subsets.empty()) throw ConfigError("ablation.subsets: at least one subset is required");
  std::vector<Job> jobs;
  int order = 0;
  for (const auto& sub : cfg.ablation_subsets) {
    const auto vote = vote_rule_for(sub);
    for (auto s : cfg.seeds) jobs.push_back({order, subset_label(sub), serving::Method::Cdcsde, cfg.lag, vote, s});
    ++order;
  }
  return jobs;
}

inline std::vector<Job> lag_jobs(const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  int order = 0;
  for (const auto& p : cfg.lag_policies)
    for (auto m : cfg.methods) {
      for (auto s : cfg.seeds) jobs.push_back({order, lag_label(p) + "/" + serving::to_string(m), m, p, cfg.serving.vote, s});
      ++order;
    }
  return jobs;
}

inline GridResult run_experiment(const ExperimentConfig& cfg) { return run_grid(cfg, method_jobs(cfg), cfg.output_dir); }
inline GridResult ablate(const ExperimentConfig& cfg) { return run_grid(cfg, ablation_jobs(cfg), cfg.output_dir); }
inline GridResult lag_sweep(const ExperimentConfig& cfg) { return run_grid(cfg, lag_jobs(cfg), cfg.output_dir); }

// Rebuilds metrics and the summary table from a directory of run logs.
inline GridResult report(const std::string& dir, const evaluation::AttributionConfig& attr = {}) {
  const fs::path logs = fs::path(dir) / "logs";
  if (!fs::is_directory(logs)) throw Error("report: '" + logs.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(logs))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  if (files.empty()) throw Error("report: no run logs under '" + logs.string() + "'");
  std::sort(files.begin(), files.end());
  GridResult g;
  for (const auto& f : files) {
    const LoggedRun r = read_log(f);
    JobResult jr;
    jr.job.order = r.order;
    jr.job.label = r.label;
    jr.job.seed = r.seed;
    jr.mean_accuracy = r.mean_accuracy();
    jr.alarms = r.alarms;
    jr.metrics = evaluation::compute_metrics(jr.mean_accuracy, r.alarms, r.truth, r.first, r.last, attr);
    g.runs.push_back(std::move(jr));
  }
  std::stable_sort(g.runs.begin(), g.runs.end(), [](const JobResult& a, const JobResult& b) {
    return a.job.order != b.job.order ? a.job.order < b.job.order : a.job.seed < b.job.seed;
  });
  g.summary = summarize_by_label(g.runs);
  g.table = evaluation::summary_table(g.summary);
  return g;
}

}  // namespace cdcsde::experiment
