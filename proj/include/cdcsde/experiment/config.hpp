#pragma once

// Experiment configuration: a JSON document whose every field is optional.
// Missing fields take the defaults below; unknown fields are rejected with
// their dotted path so typos never silently fall back to a default.

#include "cdcsde/evaluation.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace cdcsde::experiment {

using json = nlohmann::json;

struct ConfigError : Error {
  using Error::Error;
};

struct ExperimentConfig {
  StreamSpec stream = StreamSpec::sea_default();
  LagPolicy lag = LagPolicy::exponential(4.0);
  std::vector<serving::Method> methods{serving::Method::Cdcsde, serving::Method::Ddm, serving::Method::PageHinkley,
                                       serving::Method::Ewma};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  serving::ServingConfig serving;  // method and seed are filled per run
  evaluation::AttributionConfig attribution;
  std::vector<std::vector<int>> ablation_subsets{{1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}, {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5, 6}};
  std::vector<LagPolicy> lag_policies{LagPolicy::exponential(2.0), LagPolicy::exponential(4.0),
                                      LagPolicy::exponential(10.0), LagPolicy::fixed_lag(2),
                                      LagPolicy::fixed_lag(4),     LagPolicy::fixed_lag(10)};
  int threads = 0;  // 0 = hardware concurrency
  bool log_predictions = true;
  std::string output_dir = "runs/default";
};

// ---- strict reader ---------------------------------------------------------------

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), field(key));
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k) + ": unknown field");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

}  // namespace detail

// ---- lag policies -------------------------------------------------------------------

inline json lag_to_json(const LagPolicy& p) {
  if (p.kind == LagPolicy::Kind::Fixed) return {{"kind", "fixed"}, {"l", p.fixed}};
  return {{"kind", "exponential"}, {"scale", p.scale}};
}

inline LagPolicy parse_lag(const std::string& s);

// Either {"kind": ..., "scale"/"l": ...} or the compact string form.
inline LagPolicy lag_from_json(const json& j, const std::string& path) {
  if (j.is_string()) return detail::wrap(path, [&] { return parse_lag(j.get<std::string>()); });
  detail::Reader r(j, path);
  std::string kind = "exponential";
  r.get("kind", kind);
  LagPolicy p;
  if (kind == "exponential") {
    p.kind = LagPolicy::Kind::Exponential;
    r.get("scale", p.scale);
  } else if (kind == "fixed") {
    p.kind = LagPolicy::Kind::Fixed;
    r.get("l", p.fixed);
  } else {
    throw ConfigError(r.field("kind") + ": expected 'exponential' or 'fixed', got '" + kind + "'");
  }
  r.finish();
  detail::wrap(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

// Compact forms used on the command line: "exp:4", "fixed:2".
inline LagPolicy parse_lag(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("lag '" + s + "': expected exp:<scale> or fixed:<l>");
  const std::string kind = s.substr(0, colon), val = s.substr(colon + 1);
  LagPolicy p;
  try {
    std::size_t used = 0;
    if (kind == "exp" || kind == "exponential")
      p = LagPolicy::exponential(std::stod(val, &used));
    else if (kind == "fixed")
      p = LagPolicy::fixed_lag(std::stoi(val, &used));
    else
      throw ConfigError("lag '" + s + "': unknown kind '" + kind + "'");
    if (used != val.size()) throw std::invalid_argument(val);
  } catch (const std::logic_error&) {
    throw ConfigError("lag '" + s + "': bad number '" + val + "'");
  }
  detail::wrap("lag '" + s + "'", [&] {
    p.validate();
    return 0;
  });
  return p;
}

inline std::string lag_label(const LagPolicy& p) {
  std::ostringstream o;
  if (p.kind == LagPolicy::Kind::Fixed)
    o << "fixed(" << p.fixed << ")";
  else
    o << "exp(" << p.scale << ")";
  return o.str();
}

// ---- signals subsets ----------------------------------------------------------------

inline std::string subset_label(const std::vector<int>& s) {
  std::string out;
  for (int q : s) out += (out.empty() ? "q" : "+q") + std::to_string(q);
  return out;
}

inline control::VoteRule vote_rule_for(const std::vector<int>& subset) {
  if (subset.empty()) throw ConfigError("signal subset is empty");
  control::VoteRule r;
  r.included.fill(false);
  for (int q : subset) {
    if (q < 1 || q > control::kSignals) throw ConfigError("signal q" + std::to_string(q) + " does not exist (use 1..6)");
    r.included[static_cast<std::size_t>(q - 1)] = true;
  }
  return r;
}

inline std::vector<int> included_signals(const control::VoteRule& r) {
  std::vector<int> out;
  for (int i = 0; i < control::kSignals; ++i)
    if (r.included[static_cast<std::size_t>(i)]) out.push_back(i + 1);
  return out;
}

// ---- serialization --------------------------------------------------------------------

inline json pool_to_json(const PoolSource& p) {
  if (p.kind == PoolSource::Kind::Csv) return {{"kind", "csv"}, {"path", p.path}};
  return {{"kind", "clusters"}};
}

inline json to_json(const ExperimentConfig& c) {
  const auto& s = c.stream;
  const auto& v = c.serving;
  const auto& cc = s.composite.clusters;
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(serving::to_string(m));
  json policies = json::array();
  for (const auto& p : c.lag_policies) policies.push_back(lag_to_json(p));
  return {
      {"stream",
       {{"generator", to_string(s.generator)},
        {"total_samples", s.total_samples},
        {"batch_size", s.batch_size},
        {"concept_length", s.concept_length},
        {"label_noise", s.label_noise},
        {"gaussian", {{"dim", s.gaussian_dim}, {"classes", s.gaussian_classes}, {"separation", s.gaussian_separation}}},
        {"composite",
         {{"scenario", to_string(s.composite.scenario)},
          {"peak_fraction", s.composite.peak_fraction},
          {"period", s.composite.period},
          {"ramp_batches", s.composite.ramp_batches},
          {"base", pool_to_json(s.composite.base)},
          {"drift", pool_to_json(s.composite.drift)},
          {"clusters",
           {{"dim", cc.dim},
            {"classes", cc.classes},
            {"base_size", cc.base_size},
            {"drift_size", cc.drift_size},
            {"class_separation", cc.class_separation},
            {"spread", cc.spread},
            {"domain_gap", cc.domain_gap}}}}},
        {"csv_path", s.csv_path}}},
      {"lag", lag_to_json(c.lag)},
      {"methods", methods},
      {"seeds", c.seeds},
      {"signals",
       {{"included", included_signals(v.vote)},
        {"kpi", signals::to_string(v.kpi)},
        {"kpi_window", v.kpi_window},
        {"kpi_decay", v.kpi_decay},
        {"hellinger_bins", v.hellinger_bins},
        {"spn_groups", v.spn.groups},
        {"spn_components", v.spn.components},
        {"spn_sigma_floor", v.spn.sigma_floor},
        {"kfac_damping", v.kfac_damping},
        {"q1_full_buffer_only", v.q1_full_buffer_only}}},
      {"control",
       {{"warmup", v.control.warmup},
        {"eps_floor", v.control.eps_floor},
        {"fallback_window", v.fallback_window},
        {"reset_after_retrain", v.reset_after_retrain}}},
      {"training",
       {{"warm_start_batches", v.warm_start_batches},
        {"epochs", v.classifier.train.epochs},
        {"retrain_epochs", v.retrain_epochs},
        {"retrain_min_updates", v.retrain_min_updates},
        {"lr", v.classifier.train.lr},
        {"minibatch", v.classifier.train.minibatch},
        {"hidden", v.classifier.hidden},
        {"ae_bottleneck", v.autoencoder.bottleneck},
        {"embedding_width", v.embedding_autoencoder.bottleneck},
        {"max_retrain_batches", v.max_retrain_batches},
        {"include_warm_start", v.retrain_with_warm_start},
        {"fine_tune", v.fine_tune},
        {"defer_unlabeled_retrain", v.defer_unlabeled_retrain},
        {"refit_on_late_labels", v.refit_on_late_labels},
        {"kpi_current_model_only", v.kpi_current_model_only}}},
      {"baselines",
       {{"ddm", {{"warmup", v.baseline.ddm.warmup}, {"warning_sigmas", v.baseline.ddm.warning_sigmas}, {"drift_sigmas", v.baseline.ddm.drift_sigmas}}},
        {"ph", {{"delta", v.baseline.ph.delta}, {"lambda", v.baseline.ph.lambda}, {"alpha", v.baseline.ph.alpha}, {"warmup", v.baseline.ph.warmup}}},
        {"ewma",
         {{"decay", v.baseline.ewma.decay},
          {"warning_mult", v.baseline.ewma.warning_mult},
          {"drift_mult", v.baseline.ewma.drift_mult},
          {"warmup", v.baseline.ewma.warmup}}}}},
      {"evaluation",
       {{"attribution", c.attribution.rule == evaluation::Attribution::Windowed ? "windowed" : "first-after"},
        {"window", c.attribution.window}}},
      {"ablation", {{"subsets", c.ablation_subsets}}},
      {"lag_sweep", {{"policies", policies}}},
      {"threads", c.threads},
      {"log_predictions", c.log_predictions},
      {"output_dir", c.output_dir},
  };
}

namespace detail {

inline PoolSource pool_from_json(Reader r) {
  PoolSource p;
  std::string kind = "clusters";
  r.get("kind", kind);
  if (kind == "csv")
    p.kind = PoolSource::Kind::Csv;
  else if (kind != "clusters")
    throw ConfigError(r.field("kind") + ": expected 'clusters' or 'csv', got '" + kind + "'");
  r.get("path", p.path);
  r.finish();
  return p;
}

inline void read_stream(Reader r, StreamSpec& s) {
  if (r.has("generator")) {
    std::string g;
    r.get("generator", g);
    const GeneratorKind kind = wrap(r.field("generator"), [&] { return generator_from_string(g); });
    // Generator-specific sizes apply before explicit fields override them.
    const StreamSpec d = StreamSpec::defaults_for(kind);
    s.generator = kind;
    s.total_samples = d.total_samples;
    s.concept_length = d.concept_length;
  }
  r.get("total_samples", s.total_samples);
  r.get("batch_size", s.batch_size);
  r.get("concept_length", s.concept_length);
  r.get("label_noise", s.label_noise);
  r.get("csv_path", s.csv_path);
  if (r.has("gaussian")) {
    Reader g = r.child("gaussian");
    g.get("dim", s.gaussian_dim);
    g.get("classes", s.gaussian_classes);
    g.get("separation", s.gaussian_separation);
    g.finish();
  }
  if (r.has("composite")) {
    Reader c = r.child("composite");
    auto& comp = s.composite;
    if (c.has("scenario")) {
      std::string sc;
      c.get("scenario", sc);
      comp.scenario = wrap(c.field("scenario"), [&] { return scenario_from_string(sc); });
    }
    c.get("peak_fraction", comp.peak_fraction);
    c.get("period", comp.period);
    c.get("ramp_batches", comp.ramp_batches);
    if (c.has("base")) comp.base = pool_from_json(c.child("base"));
    if (c.has("drift")) comp.drift = pool_from_json(c.child("drift"));
    if (c.has("clusters")) {
      Reader k = c.child("clusters");
      auto& cc = comp.clusters;
      k.get("dim", cc.dim);
      k.get("classes", cc.classes);
      k.get("base_size", cc.base_size);
      k.get("drift_size", cc.drift_size);
      k.get("class_separation", cc.class_separation);
      k.get("spread", cc.spread);
      k.get("domain_gap", cc.domain_gap);
      k.finish();
    }
    c.finish();
  }
  r.finish();
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  using detail::wrap;
  const auto& s = c.stream;
  if (s.generator == GeneratorKind::Csv) {
    if (s.csv_path.empty()) throw ConfigError("stream.csv_path: required for csv streams");
    if (!std::filesystem::exists(s.csv_path)) throw ConfigError("stream.csv_path: file '" + s.csv_path + "' does not exist");
  }
  if (s.generator == GeneratorKind::Composite) {
    for (const auto& [name, p] : {std::pair{"base", &s.composite.base}, std::pair{"drift", &s.composite.drift}}) {
      if (p->kind != PoolSource::Kind::Csv) continue;
      const std::string field = std::string("stream.composite.") + name + ".path";
      if (p->path.empty()) throw ConfigError(field + ": required for csv pools");
      if (!std::filesystem::exists(p->path)) throw ConfigError(field + ": file '" + p->path + "' does not exist");
    }
  }
  wrap("stream", [&] {
    s.validate();
    return 0;
  });
  wrap("lag", [&] {
    c.lag.validate();
    return 0;
  });
  if (c.methods.empty()) throw ConfigError("methods: at least one method is required");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  const auto& v = c.serving;
  if (v.vote.others_included() == 0 && !v.vote.included[0]) throw ConfigError("signals.included: signal subset is empty");
  if (v.warm_start_batches < 1) throw ConfigError("training.warm_start_batches: must be >= 1");
  if (s.generator != GeneratorKind::Csv && v.warm_start_batches >= s.n_batches()) throw ConfigError("training.warm_start_batches: must be smaller than the stream's batch count");
  if (v.kpi_window < 1) throw ConfigError("signals.kpi_window: must be >= 1");
  if (!(v.kpi_decay > 0.0 && v.kpi_decay < 1.0)) throw ConfigError("signals.kpi_decay: must be in (0,1)");
  if (v.hellinger_bins < 1) throw ConfigError("signals.hellinger_bins: must be >= 1");
  if (v.spn.groups < 1 || v.spn.components < 1) throw ConfigError("signals.spn_groups/spn_components: must be >= 1");
  if (!(v.kfac_damping > 0.0)) throw ConfigError("signals.kfac_damping: must be positive");
  if (v.control.warmup < 1) throw ConfigError("control.warmup: must be >= 1");
  if (v.fallback_window < 1) throw ConfigError("control.fallback_window: must be >= 1");
  if (v.retrain_epochs < 0 || v.classifier.train.epochs < 0) throw ConfigError("training.epochs: must be >= 0");
  if (!(v.classifier.train.lr > 0.0)) throw ConfigError("training.lr: must be positive");
  if (v.classifier.train.minibatch < 1) throw ConfigError("training.minibatch: must be >= 1");
  for (const auto& sub : c.ablation_subsets) wrap("ablation.subsets", [&] { return vote_rule_for(sub); });
  if (c.lag_policies.empty()) throw ConfigError("lag_sweep.policies: at least one policy is required");
}

inline ExperimentConfig from_json(const json& j) {
  using detail::Reader;
  using detail::wrap;
  ExperimentConfig c;
  Reader r(j, "");
  if (r.has("stream")) detail::read_stream(r.child("stream"), c.stream);
  if (r.has("lag")) c.lag = lag_from_json(r.raw("lag"), "lag");
  if (r.has("methods")) {
    std::vector<std::string> ms;
    r.get("methods", ms);
    c.methods.clear();
    for (const auto& m : ms) c.methods.push_back(wrap("methods", [&] { return serving::method_from_string(m); }));
  }
  r.get("seeds", c.seeds);
  auto& v = c.serving;
  if (r.has("signals")) {
    Reader s = r.child("signals");
    if (s.has("included")) {
      std::vector<int> inc;
      s.get("included", inc);
      v.vote = wrap("signals.included", [&] { return vote_rule_for(inc); });
    }
    if (s.has("kpi")) {
      std::string k;
      s.get("kpi", k);
      v.kpi = wrap("signals.kpi", [&] { return signals::kpi_from_string(k); });
    }
    s.get("kpi_window", v.kpi_window);
    s.get("kpi_decay", v.kpi_decay);
    s.get("hellinger_bins", v.hellinger_bins);
    s.get("spn_groups", v.spn.groups);
    s.get("spn_components", v.spn.components);
    s.get("spn_sigma_floor", v.spn.sigma_floor);
    s.get("kfac_damping", v.kfac_damping);
    s.get("q1_full_buffer_only", v.q1_full_buffer_only);
    s.finish();
  }
  if (r.has("control")) {
    Reader s = r.child("control");
    s.get("warmup", v.control.warmup);
    s.get("eps_floor", v.control.eps_floor);
    s.get("fallback_window", v.fallback_window);
    s.get("reset_after_retrain", v.reset_after_retrain);
    s.finish();
  }
  if (r.has("training")) {
    Reader s = r.child("training");
    s.get("warm_start_batches", v.warm_start_batches);
    s.get("epochs", v.classifier.train.epochs);
    s.get("retrain_epochs", v.retrain_epochs);
    s.get("retrain_min_updates", v.retrain_min_updates);
    s.get("lr", v.classifier.train.lr);
    s.get("minibatch", v.classifier.train.minibatch);
    s.get("hidden", v.classifier.hidden);
    s.get("ae_bottleneck", v.autoencoder.bottleneck);
    s.get("embedding_width", v.embedding_autoencoder.bottleneck);
    s.get("max_retrain_batches", v.max_retrain_batches);
    s.get("include_warm_start", v.retrain_with_warm_start);
    s.get("fine_tune", v.fine_tune);
    s.get("defer_unlabeled_retrain", v.defer_unlabeled_retrain);
    s.get("refit_on_late_labels", v.refit_on_late_labels);
    s.get("kpi_current_model_only", v.kpi_current_model_only);
    s.finish();
  }
  // One optimizer setting drives every model.
  for (auto* t : {&v.autoencoder.train, &v.embedding_autoencoder.train, &v.spn.train}) {
    t->epochs = v.classifier.train.epochs;
    t->lr = v.classifier.train.lr;
    t->minibatch = v.classifier.train.minibatch;
  }
  if (r.has("baselines")) {
    Reader b = r.child("baselines");
    if (b.has("ddm")) {
      Reader d = b.child("ddm");
      d.get("warmup", v.baseline.ddm.warmup);
      d.get("warning_sigmas", v.baseline.ddm.warning_sigmas);
      d.get("drift_sigmas", v.baseline.ddm.drift_sigmas);
      d.finish();
    }
    if (b.has("ph")) {
      Reader d = b.child("ph");
      d.get("delta", v.baseline.ph.delta);
      d.get("lambda", v.baseline.ph.lambda);
      d.get("alpha", v.baseline.ph.alpha);
      d.get("warmup", v.baseline.ph.warmup);
      d.finish();
    }
    if (b.has("ewma")) {
      Reader d = b.child("ewma");
      d.get("decay", v.baseline.ewma.decay);
      d.get("warning_mult", v.baseline.ewma.warning_mult);
      d.get("drift_mult", v.baseline.ewma.drift_mult);
      d.get("warmup", v.baseline.ewma.warmup);
      d.finish();
    }
    b.finish();
  }
  if (r.has("evaluation")) {
    Reader e = r.child("evaluation");
    std::string rule = "first-after";
    e.get("attribution", rule);
    if (rule == "windowed")
      c.attribution.rule = evaluation::Attribution::Windowed;
    else if (rule == "first-after")
      c.attribution.rule = evaluation::Attribution::FirstAfter;
    else
      throw ConfigError("evaluation.attribution: expected 'first-after' or 'windowed', got '" + rule + "'");
    e.get("window", c.attribution.window);
    e.finish();
  }
  if (r.has("ablation")) {
    Reader a = r.child("ablation");
    a.get("subsets", c.ablation_subsets);
    a.finish();
  }
  if (r.has("lag_sweep")) {
    Reader a = r.child("lag_sweep");
    if (a.has("policies")) {
      c.lag_policies.clear();
      const json& ps = a.raw("policies");
      if (!ps.is_array()) throw ConfigError("lag_sweep.policies: expected an array");
      for (std::size_t i = 0; i < ps.size(); ++i)
        c.lag_policies.push_back(lag_from_json(ps[i], "lag_sweep.policies[" + std::to_string(i) + "]"));
    }
    a.finish();
  }
  r.get("threads", c.threads);
  r.get("log_predictions", c.log_predictions);
  r.get("output_dir", c.output_dir);
  r.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file '" + path + "' cannot be opened");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return from_json(j);
}

}  // namespace cdcsde::experiment
