#pragma once

// The serving loop: predict each arriving batch, resolve lagged labels,
// compute the six signals, run per-signal control and the vote, and retrain
// every model on the selected batches when drift fires. Baseline detectors
// reuse the same loop with the vote replaced by a single delayed-KPI detector.

#include "cdcsde/baselines.hpp"
#include "cdcsde/control.hpp"
#include "cdcsde/models/serialize.hpp"
#include "cdcsde/signals.hpp"
#include "cdcsde/stream.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace cdcsde::serving {

using json = nlohmann::json;

enum class Method { Cdcsde, Ddm, PageHinkley, Ewma };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Cdcsde: return "cdcsde";
    case Method::Ddm: return "ddm";
    case Method::PageHinkley: return "ph";
    case Method::Ewma: return "ewma";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "cdcsde") return Method::Cdcsde;
  if (s == "ddm") return Method::Ddm;
  if (s == "ph") return Method::PageHinkley;
  if (s == "ewma") return Method::Ewma;
  throw Error("unknown method '" + s + "'");
}

inline evaluation::DetectorKind detector_for(Method m) {
  switch (m) {
    case Method::Ddm: return evaluation::DetectorKind::Ddm;
    case Method::PageHinkley: return evaluation::DetectorKind::PageHinkley;
    case Method::Ewma: return evaluation::DetectorKind::Ewma;
    case Method::Cdcsde: break;
  }
  throw Error("method has no baseline detector");
}

inline models::AutoencoderConfig unstructured_autoencoder_defaults() {
  models::AutoencoderConfig c;
  c.bottleneck = 500;
  c.activation = models::Activation::Tanh;
  return c;
}

struct ServingConfig {
  Method method = Method::Cdcsde;
  int warm_start_batches = 50;
  models::ClassifierConfig classifier;
  models::AutoencoderConfig autoencoder;                                           // structured streams
  models::AutoencoderConfig embedding_autoencoder = unstructured_autoencoder_defaults();  // unstructured streams
  models::SpnConfig spn;
  int retrain_epochs = 15;
  // Floor on optimizer updates per retrain, so small retraining sets still
  // converge (15 epochs over a few batches is only a handful of steps).
  int retrain_min_updates = 1000;
  double kfac_damping = 1e-3;
  int hellinger_bins = 10;
  int kpi_window = 10;
  double kpi_decay = 0.7;
  signals::KpiKind kpi = signals::KpiKind::ErrorRate;
  // Longer than the control module's own default: the delayed-KPI signal
  // needs ~k deliveries before its weighted sum stops rising by construction.
  control::ControlConfig control{.warmup = 20};
  int fallback_window = 10;
  // Retraining keeps at most this many of the newest selected batches (0 = all).
  int max_retrain_batches = 6;
  bool reset_after_retrain = true;
  bool retrain_with_warm_start = false;
  bool fine_tune = false;
  // After a retrain, the KPI signal only ingests batches predicted by the new
  // model; deliveries for older predictions still count towards accuracy.
  bool kpi_current_model_only = false;
  // When an alarm's batches carry no usable labels yet, retrain again on the
  // same batches as soon as some of their labels arrive.
  bool defer_unlabeled_retrain = true;
  // When an alarm's batches are only partly labeled, retrain again on the same
  // batches each time more of their labels arrive, until all are labeled.
  bool refit_on_late_labels = true;
  // q1 is an unweighted-normalized sum, so it climbs while the KPI buffer
  // fills; it only reaches its control state once the buffer holds k values.
  bool q1_full_buffer_only = true;
  control::VoteRule vote;
  evaluation::BaselineParams baseline;
  std::uint64_t seed = 0;
};

struct RetrainRecord {
  Step step = 0;
  std::vector<Step> steps;
  int n_batches = 0;
  int n_labeled_batches = 0;
  bool classifier_retrained = false;
  bool fallback = false;
  bool deferred = false;  // completes an earlier event that had no usable labels
  std::string note;
};

struct StepRecord {
  Step step = 0;
  signals::ScoreVector scores;
  std::array<Zone, signals::kSignals> zones{};
  bool drift = false;
};

struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  Step first_step = 0;  // first served (post-warm-start) step
  Step last_step = -1;
  std::vector<Step> drift_truth;
  std::map<Step, double> accuracy;  // resolved per-batch accuracy of served batches
  std::vector<Step> alarms;
  std::vector<RetrainRecord> retrains;
  std::vector<StepRecord> steps;
  std::vector<std::pair<Step, double>> delayed_kpi;  // (for_step, kpi) in arrival order
  std::vector<json> events;

  double mean_accuracy() const {
    if (accuracy.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, a] : accuracy) s += a;
    return s / static_cast<double>(accuracy.size());
  }
};

struct StepOutcome {
  Step step = 0;
  signals::ScoreVector scores;
  std::array<Zone, signals::kSignals> zones{};
  control::EnsembleDecision decision;
  std::optional<RetrainRecord> retrain;
  std::vector<std::pair<Step, double>> resolved;  // (for_step, accuracy)
};

struct ArchivedBatch {
  Matrix features;
  Labels predictions;
  std::optional<Labels> labels;
};

class ServingSession {
 public:
  // Trains every model on the warm-start batches, whose labels are known.
  static ServingSession warm_start(std::span<const Batch> batches, std::span<const Labels> labels, int n_classes,
                                   bool unstructured, ServingConfig cfg) {
    if (cfg.warm_start_batches < 1) throw Error("warm start: need at least one batch");
    if (batches.size() < static_cast<std::size_t>(cfg.warm_start_batches))
      throw Error("warm start: stream has " + std::to_string(batches.size()) + " batches, warm start needs " +
                  std::to_string(cfg.warm_start_batches));
    ServingSession s(std::move(cfg), n_classes, unstructured);
    const auto w = static_cast<std::size_t>(s.cfg_.warm_start_batches);
    std::vector<const Matrix*> parts;
    Labels y;
    for (std::size_t i = 0; i < w; ++i) {
      if (batches[i].step != static_cast<Step>(i)) throw Error("warm start: batches must start at step 0 and be contiguous");
      parts.push_back(&batches[i].features);
      y.insert(y.end(), labels[i].begin(), labels[i].end());
    }
    s.dim_ = batches[0].dim();
    s.warm_x_ = vstack(parts, s.dim_);
    s.warm_y_ = y;
    s.fit_unsupervised(s.warm_x_, s.cfg_.classifier.train.epochs);
    s.fit_classifier(s.warm_x_, s.warm_y_, s.cfg_.classifier.train.epochs, /*initial=*/true);
    s.last_step_ = static_cast<Step>(w) - 1;
    s.regime_start_ = s.last_step_;
    s.report_.method = to_string(s.cfg_.method);
    s.report_.seed = s.cfg_.seed;
    s.report_.first_step = static_cast<Step>(w);
    s.report_.last_step = s.last_step_;
    return s;
  }

  StepOutcome step(const Batch& batch, const std::vector<LabelDelivery>& deliveries) {
    if (batch.step != last_step_ + 1)
      throw Error("serving: out-of-order batch " + std::to_string(batch.step) + ", expected " + std::to_string(last_step_ + 1));
    if (batch.dim() != dim_) throw DimensionError("serving: batch dimension changed");
    const Step n = batch.step;
    last_step_ = n;
    report_.last_step = n;
    StepOutcome out;
    out.step = n;

    // (a) predict with the models in force now
    const Matrix proba = models::predict_proba(models_.classifier, batch.features);
    ArchivedBatch entry{batch.features, models::argmax_rows(proba), std::nullopt};
    log(n, "predict", {{"rows", batch.rows()}});
    archive_.emplace(n, std::move(entry));

    // (b) resolve deliveries
    std::vector<signals::LabeledBatch> delivered;
    std::vector<std::pair<Step, double>> fed_kpis;
    bool pending_labeled = false;
    for (const auto& d : deliveries) {
      if (d.for_step < report_.first_step) continue;  // warm-start labels are already known
      auto it = archive_.find(d.for_step);
      if (it == archive_.end()) throw Error("serving: delivery for unknown step " + std::to_string(d.for_step));
      if (it->second.labels) continue;
      if (d.labels.size() != it->second.predictions.size()) throw DimensionError("serving: delivered label count mismatch");
      it->second.labels = d.labels;
      const double acc = models::accuracy(d.labels, it->second.predictions);
      const double k = signals::kpi(d.labels, it->second.predictions, cfg_.kpi, n_classes_);
      report_.accuracy[d.for_step] = acc;
      report_.delayed_kpi.emplace_back(d.for_step, k);
      out.resolved.emplace_back(d.for_step, acc);
      if (!cfg_.kpi_current_model_only || d.for_step > regime_start_) {
        kpi_.push(d.for_step, k);
        fed_kpis.emplace_back(d.for_step, k);
      }
      delivered.push_back({&it->second.features, &*it->second.labels});
      if (std::find(pending_.begin(), pending_.end(), d.for_step) != pending_.end()) pending_labeled = true;
      log(n, "deliver", {{"for_step", d.for_step}, {"accuracy", acc}, {"kpi", k}});
    }

    if (cfg_.method == Method::Cdcsde)
      step_ensemble(n, batch, proba, delivered, out);
    else
      step_baseline(n, fed_kpis, out);

    if (!out.retrain && pending_labeled) {
      const std::vector<Step> steps = pending_;
      out.retrain = retrain(n, steps, /*fallback=*/false, /*deferred=*/true);
      if (out.retrain->classifier_retrained) after_retrain();
    }

    StepRecord rec{n, out.scores, out.zones, out.decision.drift};
    report_.steps.push_back(std::move(rec));
    evict(n);
    return out;
  }

  const RunReport& report() const { return report_; }
  RunReport take_report() { return std::move(report_); }
  const signals::ModelSet& models() const { return models_; }
  const control::SignalStates& states() const { return states_; }
  const signals::KpiBuffer& kpi_buffer() const { return kpi_; }
  const std::map<Step, ArchivedBatch>& archive() const { return archive_; }
  const ServingConfig& config() const { return cfg_; }
  Step last_step() const { return last_step_; }
  int retrain_count() const { return retrain_count_; }

  json snapshot() const;
  static ServingSession restore(const json& snap, ServingConfig cfg);

 private:
  ServingSession(ServingConfig cfg, int n_classes, bool unstructured)
      : cfg_(std::move(cfg)),
        n_classes_(n_classes),
        states_(control::make_states(cfg_.control)),
        kpi_(cfg_.kpi_window, cfg_.kpi_decay),
        detector_(cfg_.method == Method::Cdcsde ? evaluation::DetectorKind::Ddm : detector_for(cfg_.method), cfg_.baseline) {
    models_.embed = unstructured;
    if (n_classes_ < 2) throw Error("serving: need at least two classes");
  }

  bool enabled(int i) const { return cfg_.vote.included[static_cast<std::size_t>(i)]; }
  bool ensemble() const { return cfg_.method == Method::Cdcsde; }
  bool need_autoencoder() const { return ensemble() && (enabled(3) || (models_.embed && (enabled(2) || enabled(4)))); }
  bool need_spn() const { return ensemble() && enabled(4); }
  bool need_bins() const { return ensemble() && enabled(2); }
  bool need_kfac() const { return ensemble() && enabled(5); }

  std::uint64_t seed_for(std::uint64_t salt) const {
    return cfg_.seed * 0x9E3779B97F4A7C15ULL + salt * 0xBF58476D1CE4E5B9ULL + static_cast<std::uint64_t>(retrain_count_) * 0x94D049BB133111EBULL;
  }

  models::TrainConfig train_config(models::TrainConfig base, int epochs, std::uint64_t salt) const {
    base.epochs = epochs;
    if (retrain_count_ > 0) base.min_updates = std::max(base.min_updates, cfg_.retrain_min_updates);
    base.seed = seed_for(salt);
    return base;
  }

  void fit_unsupervised(const Matrix& x, int epochs) {
    if (need_autoencoder()) {
      auto ac = models_.embed ? cfg_.embedding_autoencoder : cfg_.autoencoder;
      ac.train = train_config(ac.train, epochs, 11);
      models_.autoencoder = models::train_autoencoder(x, ac);
    }
    if (need_spn() || need_bins()) {
      const Matrix dx = models_.density_features(x);
      if (need_spn()) {
        auto sc = cfg_.spn;
        sc.train = train_config(sc.train, epochs, 13);
        models_.spn = models::train_spn(dx, sc);
      }
      if (need_bins()) models_.bins = signals::fit_hellinger_bins(dx, cfg_.hellinger_bins);
    }
  }

  // Returns false (and leaves the classifier untouched) on a degenerate set.
  bool fit_classifier(const Matrix& x, const Labels& y, int epochs, bool initial) {
    auto cc = cfg_.classifier;
    cc.train = train_config(cc.train, epochs, 17);
    if (!initial) {
      if (x.rows() == 0) return false;
      if (std::set<int>(y.begin(), y.end()).size() < 2) return false;
    }
    const bool warm = !initial && cfg_.fine_tune;
    models_.classifier = models::train_classifier(x, y, n_classes_, cc, warm ? &models_.classifier : nullptr);
    if (need_kfac()) models_.kfac = models::compute_kfac(models_.classifier, x, y, cfg_.kfac_damping);
    return true;
  }

  void step_ensemble(Step n, const Batch& batch, const Matrix& proba, const std::vector<signals::LabeledBatch>& delivered,
                     StepOutcome& out) {
    signals::ScoreContext ctx;
    ctx.step = n;
    ctx.features = &batch.features;
    ctx.proba = &proba;
    ctx.kpi = &kpi_;
    ctx.delivered = delivered;
    ctx.enabled = cfg_.vote.included;
    out.scores = signals::compute_scores(models_, ctx);
    if (cfg_.q1_full_buffer_only && kpi_.size() < static_cast<std::size_t>(cfg_.kpi_window)) out.scores.q[0].reset();

    std::array<bool, control::kSignals> present{};
    for (int i = 0; i < control::kSignals; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (!out.scores.q[k]) continue;
      present[k] = true;
      const Zone before = states_[k].zone();
      const Zone z = states_[k].observe(*out.scores.q[k], n);
      if (z != before)
        log(n, "zone_change",
            {{"signal", i + 1}, {"zone", to_string(z)}, {"p", states_[k].p()}, {"s", states_[k].s()},
             {"p_min", states_[k].p_min()}, {"s_min", states_[k].s_min()}});
    }
    out.decision = control::decide(states_, present, n, cfg_.fallback_window, report_.first_step, cfg_.vote);
    for (int i = 0; i < control::kSignals; ++i) out.zones[static_cast<std::size_t>(i)] = states_[static_cast<std::size_t>(i)].zone();
    if (!out.decision.drift) return;

    json votes = json::array();
    for (Zone z : out.decision.votes) votes.push_back(to_string(z));
    json warning_sizes = json::array();
    for (const auto& st : states_) warning_sizes.push_back(st.warning_batches().size());
    log(n, "drift", {{"rule", control::to_string(out.decision.rule)},
                     {"votes", votes},
                     {"warning_sizes", warning_sizes},
                     {"retrain_steps", out.decision.retrain_steps}});
    report_.alarms.push_back(n);
    out.retrain = retrain(n, out.decision.retrain_steps, out.decision.empty_union_fallback);
    after_retrain();
  }

  void after_retrain() {
    if (!ensemble() || !cfg_.reset_after_retrain) return;
    for (auto& s : states_) s.reset();
  }

  void step_baseline(Step n, const std::vector<std::pair<Step, double>>& fed, StepOutcome& out) {
    bool drift = false;
    std::vector<Step> warning_for_retrain;
    for (const auto& [for_step, k] : fed) {
      const Zone z = detector_.step(k);
      if (z == Zone::Warning || z == Zone::Drift) {
        baseline_warning_.push_back(for_step);
      } else {
        baseline_warning_.clear();
      }
      if (z == Zone::Drift && !drift) {
        drift = true;
        warning_for_retrain = baseline_warning_;
        detector_.reset();
        baseline_warning_.clear();
      }
    }
    out.zones.fill(Zone::Safe);
    out.zones[0] = drift ? Zone::Drift : detector_.zone();
    out.decision.drift = drift;
    out.decision.rule = drift ? control::TriggerRule::KpiModule : control::TriggerRule::None;
    if (!drift) return;

    std::vector<Step> steps;
    bool fallback = false;
    if (cfg_.method == Method::Ddm && !warning_for_retrain.empty()) {
      std::set<Step> u(warning_for_retrain.begin(), warning_for_retrain.end());
      steps.assign(u.begin(), u.end());
    } else {
      fallback = cfg_.method == Method::Ddm;
      for (Step t = std::max(report_.first_step, n - cfg_.fallback_window + 1); t <= n; ++t) steps.push_back(t);
    }
    out.decision.retrain_steps = steps;
    out.decision.empty_union_fallback = fallback;
    log(n, "drift", {{"rule", "baseline"}, {"detector", to_string(cfg_.method)}, {"retrain_steps", steps}});
    report_.alarms.push_back(n);
    out.retrain = retrain(n, steps, fallback);
  }

  RetrainRecord retrain(Step n, const std::vector<Step>& selected, bool fallback, bool deferred = false) {
    ++retrain_count_;
    std::vector<Step> steps = selected;
    if (cfg_.max_retrain_batches > 0 && steps.size() > static_cast<std::size_t>(cfg_.max_retrain_batches))
      steps.erase(steps.begin(), steps.end() - cfg_.max_retrain_batches);
    RetrainRecord rec;
    rec.step = n;
    rec.steps = steps;
    rec.fallback = fallback;
    rec.deferred = deferred;
    std::vector<const Matrix*> all_parts, lab_parts;
    Labels y;
    for (Step t : steps) {
      auto it = archive_.find(t);
      if (it == archive_.end()) throw Error("serving: retraining step " + std::to_string(t) + " missing from archive");
      all_parts.push_back(&it->second.features);
      ++rec.n_batches;
      if (it->second.labels) {
        lab_parts.push_back(&it->second.features);
        y.insert(y.end(), it->second.labels->begin(), it->second.labels->end());
        ++rec.n_labeled_batches;
      }
    }
    if (cfg_.retrain_with_warm_start) {
      all_parts.push_back(&warm_x_);
      lab_parts.push_back(&warm_x_);
      y.insert(y.end(), warm_y_.begin(), warm_y_.end());
    }
    const Matrix x_all = vstack(all_parts, dim_);
    const Matrix x_lab = vstack(lab_parts, dim_);
    fit_unsupervised(x_all, cfg_.retrain_epochs);
    rec.classifier_retrained = fit_classifier(x_lab, y, cfg_.retrain_epochs, /*initial=*/false);
    if (!rec.classifier_retrained) rec.note = x_lab.rows() == 0 ? "no labeled batches" : "degenerate label set";
    pending_.clear();
    if (rec.classifier_retrained) {
      regime_start_ = n;
      if (cfg_.kpi_current_model_only) kpi_.clear();
      if (cfg_.refit_on_late_labels && rec.n_labeled_batches < rec.n_batches) pending_ = steps;
    } else if (cfg_.defer_unlabeled_retrain) {
      pending_ = steps;
    }
    json payload{{"n_batches", rec.n_batches},
                 {"n_labeled_batches", rec.n_labeled_batches},
                 {"classifier_retrained", rec.classifier_retrained},
                 {"fallback", rec.fallback},
                 {"deferred", rec.deferred},
                 {"steps", rec.steps}};
    if (!rec.note.empty()) payload["note"] = rec.note;
    log(n, "retrain", std::move(payload));
    report_.retrains.push_back(rec);
    return rec;
  }

  // Drops a batch once it is labeled, outside every warning set, and older
  // than the fallback window.
  void evict(Step now) {
    std::set<Step> keep;
    for (const auto& s : states_) keep.insert(s.warning_batches().begin(), s.warning_batches().end());
    keep.insert(baseline_warning_.begin(), baseline_warning_.end());
    keep.insert(pending_.begin(), pending_.end());
    for (auto it = archive_.begin(); it != archive_.end();) {
      const bool recent = it->first > now - cfg_.fallback_window;
      if (it->second.labels && !recent && !keep.count(it->first))
        it = archive_.erase(it);
      else
        ++it;
    }
  }

  void log(Step n, const char* event, json payload) {
    report_.events.push_back({{"step", n}, {"event", event}, {"payload", std::move(payload)}});
  }

  ServingConfig cfg_;
  int n_classes_ = 2;
  Eigen::Index dim_ = 0;
  signals::ModelSet models_;
  control::SignalStates states_;
  signals::KpiBuffer kpi_;
  evaluation::BaselineDetector detector_;
  std::vector<Step> baseline_warning_;
  std::vector<Step> pending_;  // batches of an alarm still waiting for labels
  std::map<Step, ArchivedBatch> archive_;
  Matrix warm_x_;
  Labels warm_y_;
  Step last_step_ = -1;
  Step regime_start_ = -1;  // last step predicted by a replaced model
  int retrain_count_ = 0;
  RunReport report_;
};

// ---- checkpointing -----------------------------------------------------------------

inline json ServingSession::snapshot() const {
  using models::to_json;
  json j;
  j["version"] = models::kSnapshotVersion;
  j["method"] = to_string(cfg_.method);
  j["n_classes"] = n_classes_;
  j["dim"] = dim_;
  j["last_step"] = last_step_;
  j["regime_start"] = regime_start_;
  j["first_step"] = report_.first_step;
  j["retrain_count"] = retrain_count_;
  j["embed"] = models_.embed;
  json m;
  if (!models_.classifier.layers.empty()) m["classifier"] = to_json(models_.classifier);
  if (!models_.kfac.layers.empty()) m["kfac"] = to_json(models_.kfac);
  if (!models_.autoencoder.encoder.layers.empty()) m["autoencoder"] = to_json(models_.autoencoder);
  if (!models_.spn.groups.empty()) m["spn"] = to_json(models_.spn);
  if (!models_.bins.edges.empty()) m["bins"] = {{"edges", models_.bins.edges}, {"train_props", models_.bins.train_props}};
  j["models"] = std::move(m);
  json states = json::array();
  for (const auto& s : states_) {
    const auto r = s.raw();
    states.push_back({{"count", r.count}, {"sum", r.sum}, {"p", r.p}, {"s", r.s}, {"p_mean", r.p_mean}, {"p_m2", r.p_m2},
                      {"p_min", r.p_min}, {"s_min", r.s_min}, {"has_min", r.has_min}, {"zone", to_string(r.zone)},
                      {"warning", r.warning}});
  }
  j["states"] = std::move(states);
  json kpi = json::array();
  for (const auto& [st, v] : kpi_.entries()) kpi.push_back({st, v});
  j["kpi_buffer"] = std::move(kpi);
  j["baseline_warning"] = baseline_warning_;
  j["pending"] = pending_;
  json arch = json::array();
  for (const auto& [st, a] : archive_) {
    json e{{"step", st}, {"features", models::matrix_to_json(a.features)}, {"predictions", a.predictions}};
    if (a.labels) e["labels"] = *a.labels;
    arch.push_back(std::move(e));
  }
  j["archive"] = std::move(arch);
  j["warm_x"] = models::matrix_to_json(warm_x_);
  j["warm_y"] = warm_y_;
  return j;
}

// Restores models, signal states, KPI buffer and archive. Baseline detector
// internals restart fresh.
inline ServingSession ServingSession::restore(const json& j, ServingConfig cfg) {
  if (j.at("version").get<int>() != models::kSnapshotVersion) throw Error("checkpoint: unsupported version");
  if (j.at("method").get<std::string>() != to_string(cfg.method)) throw Error("checkpoint: method does not match config");
  ServingSession s(std::move(cfg), j.at("n_classes").get<int>(), j.at("embed").get<bool>());
  s.dim_ = j.at("dim").get<Eigen::Index>();
  s.last_step_ = j.at("last_step").get<Step>();
  s.regime_start_ = j.at("regime_start").get<Step>();
  s.retrain_count_ = j.at("retrain_count").get<int>();
  s.report_.method = to_string(s.cfg_.method);
  s.report_.seed = s.cfg_.seed;
  s.report_.first_step = j.at("first_step").get<Step>();
  s.report_.last_step = s.last_step_;
  const json& m = j.at("models");
  if (m.contains("classifier")) s.models_.classifier = models::mlp_from_json(m.at("classifier"));
  if (m.contains("kfac")) s.models_.kfac = models::kfac_from_json(m.at("kfac"));
  if (m.contains("autoencoder")) s.models_.autoencoder = models::autoencoder_from_json(m.at("autoencoder"));
  if (m.contains("spn")) s.models_.spn = models::spn_from_json(m.at("spn"));
  if (m.contains("bins")) {
    s.models_.bins.edges = m.at("bins").at("edges").get<std::vector<std::vector<double>>>();
    s.models_.bins.train_props = m.at("bins").at("train_props").get<std::vector<std::vector<double>>>();
  }
  const json& st = j.at("states");
  for (std::size_t i = 0; i < s.states_.size(); ++i) {
    const json& e = st.at(i);
    control::ControlState::Raw r{e.at("count").get<long>(), e.at("sum").get<double>(), e.at("p").get<double>(),
                                 e.at("s").get<double>(), e.at("p_mean").get<double>(), e.at("p_m2").get<double>(),
                                 e.at("p_min").get<double>(), e.at("s_min").get<double>(), e.at("has_min").get<bool>(),
                                 zone_from_string(e.at("zone").get<std::string>()), e.at("warning").get<std::vector<Step>>()};
    s.states_[i] = control::ControlState::from_raw(s.cfg_.control, r);
  }
  for (const auto& e : j.at("kpi_buffer")) s.kpi_.push(e.at(0).get<Step>(), e.at(1).get<double>());
  s.baseline_warning_ = j.at("baseline_warning").get<std::vector<Step>>();
  s.pending_ = j.at("pending").get<std::vector<Step>>();
  for (const auto& e : j.at("archive")) {
    ArchivedBatch a{models::matrix_from_json(e.at("features")), e.at("predictions").get<Labels>(), std::nullopt};
    if (e.contains("labels")) a.labels = e.at("labels").get<Labels>();
    s.archive_.emplace(e.at("step").get<Step>(), std::move(a));
  }
  s.warm_x_ = models::matrix_from_json(j.at("warm_x"));
  s.warm_y_ = j.at("warm_y").get<Labels>();
  return s;
}

// ---- whole-stream driver -------------------------------------------------------------

// Warm-starts on the first batches, then serves the rest under `lag`.
inline RunReport run_stream(const LabeledStream& stream, const LagPolicy& lag, const ServingConfig& cfg) {
  LabelScheduler sched(stream, lag);
  const auto w = static_cast<std::size_t>(cfg.warm_start_batches);
  if (stream.size() < w) throw Error("run: stream shorter than warm start");
  for (std::size_t i = 0; i < w; ++i) sched.next();  // warm-start deliveries are ignored
  ServingSession session = ServingSession::warm_start(std::span<const Batch>(stream.batches.data(), w),
                                                      std::span<const Labels>(stream.labels.data(), w), stream.n_classes,
                                                      stream.unstructured, cfg);
  while (!sched.done()) {
    ScheduledStep s = sched.next();
    session.step(*s.batch, s.deliveries);
  }
  RunReport r = session.take_report();
  r.drift_truth = stream.drift_truth;
  return r;
}

}  // namespace cdcsde::serving
