#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "mabert/geo.hpp"
#include "mabert/model.hpp"

namespace mabert {

enum class Mode { pretrain, finetune, scratch, incremental };
enum class Task { mask_recovery, trajectory, eta };
enum class Period { day, week, month };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::pretrain: return "pretrain";
    case Mode::finetune: return "finetune";
    case Mode::scratch: return "scratch";
    case Mode::incremental: return "incremental";
  }
  return "?";
}

inline const char* task_name(Task t) {
  switch (t) {
    case Task::mask_recovery: return "mask_recovery";
    case Task::trajectory: return "trajectory";
    case Task::eta: return "eta";
  }
  return "?";
}

inline const char* period_name(Period p) {
  switch (p) {
    case Period::day: return "day";
    case Period::week: return "week";
    case Period::month: return "month";
  }
  return "?";
}

inline Mode mode_from(const std::string& s) {
  if (s == "pretrain") return Mode::pretrain;
  if (s == "finetune") return Mode::finetune;
  if (s == "scratch") return Mode::scratch;
  if (s == "incremental") return Mode::incremental;
  throw std::invalid_argument("unknown mode: " + s);
}

inline Task task_from(const std::string& s) {
  if (s == "mask_recovery") return Task::mask_recovery;
  if (s == "trajectory") return Task::trajectory;
  if (s == "eta") return Task::eta;
  throw std::invalid_argument("unknown task: " + s);
}

inline Period period_from(const std::string& s) {
  if (s == "day") return Period::day;
  if (s == "week") return Period::week;
  if (s == "month") return Period::month;
  throw std::invalid_argument("unknown period: " + s);
}

inline std::int64_t period_seconds(Period p) {
  switch (p) {
    case Period::day: return 86400;
    case Period::week: return 7 * 86400;
    case Period::month: return 30 * 86400;
  }
  return 86400;
}

/// Learning rates and epoch counts used when the plan does not override
/// them: pre-training and from-scratch runs use 1e-4 (100 epochs),
/// fine-tuning uses 2e-5 for trajectory and 5e-5 for ETA (10 epochs).
inline double default_lr(Mode mode, Task task) {
  if (mode == Mode::pretrain || mode == Mode::scratch) return 1e-4;
  return task == Task::eta ? 5e-5 : 2e-5;
}

inline std::size_t default_epochs(Mode mode) {
  return (mode == Mode::pretrain || mode == Mode::scratch) ? 100 : 10;
}

struct ExperimentPlan {
  Mode mode = Mode::pretrain;
  Task task = Task::mask_recovery;
  std::size_t epochs = 100;
  double lr = 1e-4;
  std::size_t batch_size = 8;
  double data_fraction = 1.0;
  Period update_period = Period::month;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("ExperimentPlan: epochs must be >= 1");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0))
      throw std::invalid_argument("ExperimentPlan: data_fraction must be in (0,1]");
    if (batch_size < 1) throw std::invalid_argument("ExperimentPlan: batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("ExperimentPlan: lr must be positive");
  }
};

struct MetricsReport {
  Task task = Task::trajectory;
  std::optional<double> he_nm;
  std::optional<double> ve_ft;
  std::optional<double> mae_s;
  std::optional<double> rmse_s;
  std::size_t n_samples = 0;
  double wall_time_s = 0.0;
};

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Append-only key=value run log; one line per event.
class RunLog {
 public:
  class Line {
   public:
    explicit Line(const std::string& event) : s_("event=" + event) {}
    Line& kv(const std::string& k, const std::string& v) {
      s_ += " " + k + "=" + v;
      return *this;
    }
    Line& kv(const std::string& k, const char* v) { return kv(k, std::string(v)); }
    Line& kv(const std::string& k, double v) { return kv(k, fmt_g(v)); }
    Line& kv(const std::string& k, std::size_t v) { return kv(k, std::to_string(v)); }
    Line& kv(const std::string& k, std::int64_t v) { return kv(k, std::to_string(v)); }
    const std::string& str() const { return s_; }

   private:
    std::string s_;
  };

  void add(const Line& line) { lines_.push_back(line.str()); }
  const std::vector<std::string>& lines() const { return lines_; }

  std::string text() const {
    std::string out;
    for (const auto& l : lines_) {
      out += l;
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<std::string> lines_;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train = 0.0;
  double val = 0.0;
};

struct SceneSplit {
  std::vector<const Scene*> train, val, test;
};

/// Chronological 80/10/10 split by scene window, oldest first. Blocks are
/// contiguous in time, so no window leaks across splits.
inline SceneSplit chrono_split(const std::vector<Scene>& scenes, double train_frac = 0.8,
                               double val_frac = 0.1) {
  std::vector<const Scene*> sorted;
  sorted.reserve(scenes.size());
  for (const auto& s : scenes) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Scene* a, const Scene* b) {
    return a->window_start < b->window_start;
  });
  const std::size_t n = sorted.size();
  const std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
  SceneSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + n_train);
  split.val.assign(sorted.begin() + n_train, sorted.begin() + n_train + n_val);
  split.test.assign(sorted.begin() + n_train + n_val, sorted.end());
  return split;
}

inline void fisher_yates(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);
}

/// Scenes normalized and packed for the network, paired with their source.
struct Prepared {
  const Scene* scene = nullptr;
  SceneInput input;
};

inline std::vector<Prepared> prepare(const std::vector<const Scene*>& scenes,
                                     const Normalizer& norm) {
  std::vector<Prepared> out;
  out.reserve(scenes.size());
  for (const Scene* s : scenes)
    out.push_back({s, make_scene_input(normalize(*s, norm))});
  return out;
}

inline std::size_t steps_for_seconds(std::int64_t dt, std::int64_t seconds) {
  return static_cast<std::size_t>(std::max<std::int64_t>(1, (seconds + dt / 2) / dt));
}

/// Masked-recovery loss of one scene: MSE between the recovered and the
/// original values, restricted to the masked span.
inline LossOut masked_span_loss(const Tensor& s_prime, const SceneInput& in,
                                const SpanMask& span) {
  std::vector<std::uint8_t> valid(s_prime.size(), 0);
  for (std::size_t t = span.start; t < span.start + span.len; ++t) {
    const std::size_t slot = in.slot(t, span.agent);
    for (std::size_t f = 0; f < in.F; ++f) valid[slot * in.F + f] = 1;
  }
  return mse_loss(s_prime, in.x, &valid);
}

// ---------------------------------------------------------------------------
// metric aggregation (kept separate from model execution so the hand
// oracles in the tests can drive them directly)

struct TrajectoryPair {
  std::array<double, 3> pred;   // lon, lat, alt
  std::array<double, 3> truth;
};

inline MetricsReport aggregate_trajectory(const std::vector<TrajectoryPair>& pairs,
                                          std::size_t n_samples) {
  if (pairs.empty()) throw std::runtime_error("evaluate: empty test set");
  double he = 0.0, ve = 0.0;
  for (const auto& p : pairs) {
    he += horizontal_error({p.pred[0], p.pred[1]}, {p.truth[0], p.truth[1]});
    ve += vertical_error(p.pred[2], p.truth[2]);
  }
  MetricsReport r;
  r.task = Task::trajectory;
  r.he_nm = he / static_cast<double>(pairs.size());
  r.ve_ft = ve / static_cast<double>(pairs.size());
  r.n_samples = n_samples;
  return r;
}

inline MetricsReport aggregate_eta(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw std::runtime_error("evaluate: empty test set");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& [pred, truth] : pairs) {
    const double e = pred - truth;
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(pairs.size());
  MetricsReport r;
  r.task = Task::eta;
  r.mae_s = abs_sum / n;
  r.rmse_s = std::sqrt(sq_sum / n);
  r.n_samples = pairs.size();
  return r;
}

// ---------------------------------------------------------------------------
// task plumbing

/// Agents that can host a prediction span: at least horizon + 1 valid
/// steps, so some context remains unmasked.
inline std::vector<std::size_t> trajectory_eligible(const Scene& s, std::size_t horizon) {
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < s.N; ++n)
    if (s.valid_len[n] >= horizon + 1) out.push_back(n);
  return out;
}

/// ETA ground truth: agents observed through the scene's final step are
/// queried; the label is the time from their last in-scene sample to the
/// flight's final trajectory point.
struct EtaExample {
  std::size_t agent = 0;
  double label_s = 0.0;
};

inline std::vector<EtaExample> eta_examples(const Scene& s) {
  std::vector<EtaExample> out;
  for (std::size_t n = 0; n < s.N; ++n) {
    if (s.valid_len[n] == 0) continue;
    if (s.entry_step[n] + s.valid_len[n] != s.T) continue;  // landed before scene end
    const double label = static_cast<double>(s.arrival_s[n] - s.agent_last_time(n));
    out.push_back({n, label});
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalPairs {
  std::vector<TrajectoryPair> traj;
  std::vector<std::pair<double, double>> eta;  // (pred_s, truth_s)
  std::size_t spans = 0;
};

/// Deterministic prediction pass (no dropout) collecting per-step
/// trajectory pairs or per-agent ETA pairs for metric aggregation.
inline EvalPairs collect_eval_pairs(Model& model, const std::vector<const Scene*>& scenes,
                                    Task task) {
  DropoutCtx eval_ctx;
  EvalPairs out;
  if (task == Task::trajectory || task == Task::mask_recovery) {
    for (const Scene* sc : scenes) {
      const std::size_t horizon = steps_for_seconds(sc->dt, 120);
      const auto eligible = trajectory_eligible(*sc, horizon);
      if (eligible.empty()) continue;
      const SceneInput in = make_scene_input(normalize(*sc, model.norm));
      for (std::size_t agent : eligible) {
        SpanMask span{agent, sc->valid_len[agent] - horizon, horizon};
        const EncoderTrace trace = model.encoder.forward(in, &span, eval_ctx);
        for (std::size_t t = span.start; t < span.start + span.len; ++t) {
          const std::size_t slot = in.slot(t, agent);
          TrajectoryPair pair;
          pair.pred = denormalize_point(trace.s_prime.row(slot), model.norm);
          pair.truth = {sc->at(agent, t, 0), sc->at(agent, t, 1), sc->at(agent, t, 2)};
          out.traj.push_back(pair);
        }
        ++out.spans;
      }
    }
  } else {
    if (!model.decoder) throw std::runtime_error("evaluate: model has no decoder for ETA");
    for (const Scene* sc : scenes) {
      const auto examples = eta_examples(*sc);
      if (examples.empty()) continue;
      const SceneInput in = make_scene_input(normalize(*sc, model.norm));
      std::vector<std::uint8_t> queried(sc->N, 0);
      for (const auto& ex : examples) queried[ex.agent] = 1;
      const EncoderTrace trace = model.encoder.forward(in, nullptr, eval_ctx);
      const Tensor y = model.decoder->forward(trace.memory, in, queried, eval_ctx);
      for (const auto& ex : examples)
        out.eta.emplace_back(model.eta_scaler.denormalize(y(ex.agent, 0)), ex.label_s);
    }
  }
  return out;
}

inline MetricsReport evaluate(Model& model, const std::vector<const Scene*>& scenes,
                              Task task) {
  const auto t_start = std::chrono::steady_clock::now();
  if (scenes.empty()) throw std::runtime_error("evaluate: empty test set");
  const EvalPairs pairs = collect_eval_pairs(model, scenes, task);
  MetricsReport report = (task == Task::eta) ? aggregate_eta(pairs.eta)
                                             : aggregate_trajectory(pairs.traj, pairs.spans);
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// ---------------------------------------------------------------------------
// pre-training

struct TrainResult {
  std::vector<EpochLoss> curve;
  MetricsReport report;  // meaningful for the fine-tuning tasks
};

namespace detail {

/// Shared masked-span training loop used by pre-training (random span
/// anywhere) and trajectory fine-tuning (span pinned to the agent's last
/// horizon steps). Returns per-epoch train/val losses.
struct SpanDrawer {
  std::size_t span_len = 12;
  bool tail_only = false;  // true: span covers the agent's final steps

  std::optional<SpanMask> draw(const SceneInput& in, Rng& rng) const {
    if (!tail_only) return draw_pretrain_span(in, span_len, rng);
    std::vector<std::size_t> eligible;
    for (std::size_t n = 0; n < in.N; ++n)
      if (in.valid_len[n] >= span_len + 1) eligible.push_back(n);
    if (eligible.empty()) return std::nullopt;
    const std::size_t agent = eligible[rng.below(eligible.size())];
    return SpanMask{agent, in.valid_len[agent] - span_len, span_len};
  }
};

inline std::vector<EpochLoss> masked_training_loop(Model& model,
                                                   const std::vector<Prepared>& train,
                                                   const std::vector<Prepared>& val,
                                                   const ExperimentPlan& plan,
                                                   const SpanDrawer& drawer, double dropout_p,
                                                   RunLog& log, const char* loop_name) {
  Adam opt({plan.lr});
  const auto params = model.params();
  Rng rng(plan.seed);

  // one fixed span per validation scene, comparable across epochs
  Rng val_rng = rng.child("val_mask");
  std::vector<std::optional<SpanMask>> val_spans;
  val_spans.reserve(val.size());
  for (const auto& p : val) val_spans.push_back(drawer.draw(p.input, val_rng));

  std::vector<EpochLoss> curve;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    Rng shuffle_rng = rng.child("shuffle", epoch);
    fisher_yates(order, shuffle_rng);
    Rng mask_rng = rng.child("mask", epoch);
    Rng drop_rng = rng.child("dropout", epoch);
    DropoutCtx dctx{true, dropout_p, &drop_rng};

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t batch_index = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += plan.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), pos + plan.batch_size);
      // spans drawn for the whole batch first so scenes without an
      // eligible agent do not shift the draw sequence mid-batch
      std::vector<std::pair<std::size_t, SpanMask>> picks;
      for (std::size_t k = pos; k < end; ++k) {
        const auto span = drawer.draw(train[order[k]].input, mask_rng);
        if (span) picks.emplace_back(order[k], *span);
      }
      if (picks.empty()) continue;
      model.zero_grads();
      double batch_loss = 0.0;
      for (const auto& [idx, span] : picks) {
        const Prepared& item = train[idx];
        const EncoderTrace trace = model.encoder.forward(item.input, &span, dctx);
        LossOut loss = masked_span_loss(trace.s_prime, item.input, span);
        batch_loss += loss.value;
        scale_inplace(loss.grad, 1.0 / static_cast<double>(picks.size()));
        model.encoder.backward(loss.grad, Tensor());
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error(std::string(loop_name) + " diverged at epoch " +
                                 std::to_string(epoch) + " batch " +
                                 std::to_string(batch_index));
      loss_sum += batch_loss;
      loss_count += picks.size();
      opt.step(params);
    }

    double val_sum = 0.0;
    std::size_t val_count = 0;
    DropoutCtx eval_ctx;
    for (std::size_t i = 0; i < val.size(); ++i) {
      if (!val_spans[i]) continue;
      const EncoderTrace trace = model.encoder.forward(val[i].input, &*val_spans[i], eval_ctx);
      val_sum += masked_span_loss(trace.s_prime, val[i].input, *val_spans[i]).value;
      ++val_count;
    }

    EpochLoss el;
    el.epoch = epoch;
    el.train = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    el.val = val_count ? val_sum / static_cast<double>(val_count) : 0.0;
    curve.push_back(el);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    log.add(RunLog::Line("epoch")
                .kv("loop", loop_name)
                .kv("epoch", epoch)
                .kv("train_loss", el.train)
                .kv("val_loss", el.val)
                .kv("wall_s", wall));
  }
  return curve;
}

}  // namespace detail

/// Self-supervised pre-training: one random 2-minute span per scene is
/// replaced by the mask embedding and the model is trained to recover it
/// (MSE on the masked region only).
inline TrainResult pretrain_on(Model& model, const SceneSplit& split,
                               const ExperimentPlan& plan, RunLog& log) {
  plan.validate();
  if (split.train.empty()) throw std::invalid_argument("pretrain: no training scenes");
  model.norm = Normalizer::fit(split.train);
  const auto train = prepare(split.train, model.norm);
  const auto val = prepare(split.val, model.norm);
  const std::int64_t dt = split.train.front()->dt;
  detail::SpanDrawer drawer{steps_for_seconds(dt, 120), false};
  log.add(RunLog::Line("run_start")
              .kv("mode", "pretrain")
              .kv("n_train", split.train.size())
              .kv("n_val", split.val.size())
              .kv("span_steps", drawer.span_len)
              .kv("params", model.parameter_count())
              .kv("lr", plan.lr)
              .kv("seed", static_cast<std::size_t>(plan.seed)));
  TrainResult res;
  res.curve = detail::masked_training_loop(model, train, val, plan, drawer,
                                           model.cfg.dropout_pretrain, log, "pretrain");
  return res;
}

inline TrainResult pretrain(Model& model, const std::vector<Scene>& scenes,
                            const ExperimentPlan& plan, RunLog& log) {
  return pretrain_on(model, chrono_split(scenes), plan, log);
}

/// Trajectory prediction fine-tuning: the final 2 minutes of one randomly
/// selected agent per scene are masked and trained against the truth;
/// evaluation reports mean horizontal/vertical error over the predicted
/// steps after denormalization.
inline TrainResult finetune_trajectory_on(Model& model, const SceneSplit& split,
                                          const ExperimentPlan& plan, RunLog& log) {
  plan.validate();
  if (split.train.empty()) throw std::invalid_argument("finetune: no training scenes");
  if (plan.mode == Mode::scratch) model.norm = Normalizer::fit(split.train);
  const auto train = prepare(split.train, model.norm);
  const auto val = prepare(split.val, model.norm);
  const std::int64_t dt = split.train.front()->dt;
  detail::SpanDrawer drawer{steps_for_seconds(dt, 120), true};
  log.add(RunLog::Line("run_start")
              .kv("mode", mode_name(plan.mode))
              .kv("task", "trajectory")
              .kv("n_train", split.train.size())
              .kv("n_val", split.val.size())
              .kv("horizon_steps", drawer.span_len)
              .kv("params", model.parameter_count())
              .kv("lr", plan.lr)
              .kv("seed", static_cast<std::size_t>(plan.seed)));
  TrainResult res;
  res.curve = detail::masked_training_loop(model, train, val, plan, drawer,
                                           model.cfg.dropout_finetune, log, "trajectory");
  if (!split.test.empty()) {
    res.report = evaluate(model, split.test, Task::trajectory);
    log.add(RunLog::Line("test_metrics")
                .kv("task", "trajectory")
                .kv("he_nm", *res.report.he_nm)
                .kv("ve_ft", *res.report.ve_ft)
                .kv("n", res.report.n_samples)
                .kv("wall_s", res.report.wall_time_s));
  }
  return res;
}

inline TrainResult finetune_trajectory(Model& model, const std::vector<Scene>& scenes,
                                       const ExperimentPlan& plan, RunLog& log) {
  return finetune_trajectory_on(model, chrono_split(scenes), plan, log);
}

/// ETA fine-tuning: the decoder (O = 1) predicts, for every agent still
/// airborne at scene end, the seconds until its final trajectory point.
inline TrainResult finetune_eta_on(Model& model, const SceneSplit& split,
                                   const ExperimentPlan& plan, RunLog& log) {
  plan.validate();
  if (split.train.empty()) throw std::invalid_argument("finetune: no training scenes");
  Rng rng(plan.seed);
  if (plan.mode == Mode::scratch) model.norm = Normalizer::fit(split.train);
  if (!model.decoder) {
    Rng dec_rng = rng.child("decoder_init");
    model.add_decoder(1, dec_rng);
  }

  struct Item {
    Prepared prep;
    std::vector<EtaExample> examples;
    std::vector<std::uint8_t> queried;
  };
  auto build = [&](const std::vector<const Scene*>& scenes) {
    std::vector<Item> items;
    for (const Scene* sc : scenes) {
      auto ex = eta_examples(*sc);
      if (ex.empty()) continue;  // no airborne agent: excluded from this task
      Item item;
      item.prep = {sc, make_scene_input(normalize(*sc, model.norm))};
      item.queried.assign(sc->N, 0);
      for (const auto& e : ex) item.queried[e.agent] = 1;
      item.examples = std::move(ex);
      items.push_back(std::move(item));
    }
    return items;
  };
  const auto train = build(split.train);
  const auto val = build(split.val);
  if (train.empty()) throw std::invalid_argument("finetune eta: no scene has an airborne agent");

  // keep an inherited scaler (incremental updates, fine-tuning a model that
  // already carries one); fit otherwise
  const bool scaler_unset = model.eta_scaler.mean == 0.0 && model.eta_scaler.std == 1.0;
  if (plan.mode == Mode::scratch || scaler_unset) {
    std::vector<double> train_labels;
    for (const auto& item : train)
      for (const auto& e : item.examples) train_labels.push_back(e.label_s);
    model.eta_scaler = LabelScaler::fit(train_labels);
  }

  log.add(RunLog::Line("run_start")
              .kv("mode", mode_name(plan.mode))
              .kv("task", "eta")
              .kv("n_train", train.size())
              .kv("n_val", val.size())
              .kv("label_mean_s", model.eta_scaler.mean)
              .kv("label_std_s", model.eta_scaler.std)
              .kv("params", model.parameter_count())
              .kv("lr", plan.lr)
              .kv("seed", static_cast<std::size_t>(plan.seed)));

  Adam opt({plan.lr});
  const auto params = model.params();

  auto scene_loss = [&](const Item& item, const DropoutCtx& dctx, bool backprop,
                        double grad_scale) {
    const EncoderTrace trace = model.encoder.forward(item.prep.input, nullptr, dctx);
    const Tensor y = model.decoder->forward(trace.memory, item.prep.input, item.queried, dctx);
    Tensor target = Tensor::zeros(y.rows(), 1);
    std::vector<std::uint8_t> valid(y.rows(), 0);
    for (const auto& e : item.examples) {
      target(e.agent, 0) = model.eta_scaler.normalize(e.label_s);
      valid[e.agent] = 1;
    }
    LossOut loss = mse_loss(y, target, &valid);
    if (backprop) {
      scale_inplace(loss.grad, grad_scale);
      const Tensor dmem = model.decoder->backward(loss.grad);
      model.encoder.backward(Tensor(), dmem);
    }
    return loss.value;
  };

  TrainResult res;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    Rng shuffle_rng = rng.child("shuffle", epoch);
    fisher_yates(order, shuffle_rng);
    Rng drop_rng = rng.child("dropout", epoch);
    DropoutCtx dctx{true, model.cfg.dropout_finetune, &drop_rng};

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += plan.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), pos + plan.batch_size);
      model.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t k = pos; k < end; ++k)
        batch_loss += scene_loss(train[order[k]], dctx, true,
                                 1.0 / static_cast<double>(end - pos));
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("eta fine-tuning diverged at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batch_index));
      loss_sum += batch_loss;
      opt.step(params);
    }

    DropoutCtx eval_ctx;
    double val_sum = 0.0;
    for (const auto& item : val) val_sum += scene_loss(item, eval_ctx, false, 1.0);

    EpochLoss el;
    el.epoch = epoch;
    el.train = train.empty() ? 0.0 : loss_sum / static_cast<double>(train.size());
    el.val = val.empty() ? 0.0 : val_sum / static_cast<double>(val.size());
    res.curve.push_back(el);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    log.add(RunLog::Line("epoch")
                .kv("loop", "eta")
                .kv("epoch", epoch)
                .kv("train_loss", el.train)
                .kv("val_loss", el.val)
                .kv("wall_s", wall));
  }

  if (!split.test.empty()) {
    res.report = evaluate(model, split.test, Task::eta);
    log.add(RunLog::Line("test_metrics")
                .kv("task", "eta")
                .kv("mae_s", *res.report.mae_s)
                .kv("rmse_s", *res.report.rmse_s)
                .kv("n", res.report.n_samples)
                .kv("wall_s", res.report.wall_time_s));
  }
  return res;
}

inline TrainResult finetune_eta(Model& model, const std::vector<Scene>& scenes,
                                const ExperimentPlan& plan, RunLog& log) {
  return finetune_eta_on(model, chrono_split(scenes), plan, log);
}

inline TrainResult run_task(Model& model, const SceneSplit& split, const ExperimentPlan& plan,
                            RunLog& log) {
  if (plan.task == Task::eta) return finetune_eta_on(model, split, plan, log);
  return finetune_trajectory_on(model, split, plan, log);
}

// ---------------------------------------------------------------------------
// data-fraction protocol

struct FractionRow {
  double fraction = 1.0;
  MetricsReport report;
};

/// Fine-tunes copies of the pre-trained model on seeded subsets of the
/// training scenes; validation and test sets stay fixed. fraction == 1
/// takes the plain fine-tuning path untouched (bit-identical results).
inline std::vector<FractionRow> data_fraction_run(const Model& pretrained,
                                                  const std::vector<Scene>& scenes,
                                                  const std::vector<double>& fractions,
                                                  const ExperimentPlan& plan, RunLog& log) {
  const SceneSplit split = chrono_split(scenes);
  std::vector<std::size_t> shuffled(split.train.size());
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i] = i;
  Rng frac_rng = Rng(plan.seed).child("fraction_sample");
  fisher_yates(shuffled, frac_rng);

  std::vector<FractionRow> rows;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0))
      throw std::invalid_argument("data_fraction_run: fraction must be in (0,1]");
    SceneSplit sub = split;
    if (f < 1.0) {
      const std::size_t count =
          static_cast<std::size_t>(f * static_cast<double>(split.train.size()));
      if (count == 0)
        throw std::invalid_argument("data_fraction_run: fraction yields 0 scenes");
      sub.train.clear();
      for (std::size_t i = 0; i < count; ++i) sub.train.push_back(split.train[shuffled[i]]);
    }
    log.add(RunLog::Line("fraction_start").kv("fraction", f).kv("n_train", sub.train.size()));
    Model model = pretrained;
    TrainResult res = run_task(model, sub, plan, log);
    rows.push_back({f, res.report});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// incremental (prequential) protocol

struct PeriodReport {
  std::size_t index = 0;
  std::int64_t start_s = 0;
  std::size_t n_scenes = 0;
  std::optional<MetricsReport> eval;  // absent for empty periods
  bool trained = false;
  bool overfit_prone = false;
};

struct IncrementalResult {
  std::vector<PeriodReport> periods;
  MetricsReport overall;
};

/// Periods with fewer scenes than this are flagged as overfit-prone in
/// the period report (daily updates on thin traffic).
constexpr std::size_t kOverfitSceneThreshold = 100;

/// Prequential protocol: for every period boundary, first evaluate the
/// current model on the incoming scenes, then fine-tune on them. A scene
/// is never trained on before it has been evaluated.
inline IncrementalResult incremental_run(Model& model, const std::vector<Scene>& scenes,
                                         Period period, const ExperimentPlan& plan,
                                         RunLog& log) {
  plan.validate();
  if (scenes.empty()) throw std::invalid_argument("incremental_run: no scenes");
  std::vector<const Scene*> sorted;
  for (const auto& s : scenes) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Scene* a, const Scene* b) {
    return a->window_start < b->window_start;
  });

  if (plan.task == Task::eta && !model.decoder) {
    Rng dec_rng = Rng(plan.seed).child("decoder_init");
    model.add_decoder(1, dec_rng);
  }

  const std::int64_t len = period_seconds(period);
  const std::int64_t t0 = sorted.front()->window_start;
  const std::int64_t t_end = sorted.back()->window_start;
  const std::size_t n_periods = static_cast<std::size_t>((t_end - t0) / len) + 1;

  log.add(RunLog::Line("incremental_start")
              .kv("period", period_name(period))
              .kv("n_periods", n_periods)
              .kv("n_scenes", sorted.size())
              .kv("task", task_name(plan.task))
              .kv("seed", static_cast<std::size_t>(plan.seed)));

  IncrementalResult result;
  EvalPairs pooled;
  std::size_t cursor = 0;
  bool scaler_set = model.eta_scaler.std != 1.0 || model.eta_scaler.mean != 0.0;

  for (std::size_t k = 0; k < n_periods; ++k) {
    const std::int64_t lo = t0 + static_cast<std::int64_t>(k) * len;
    const std::int64_t hi = lo + len;
    std::vector<const Scene*> current;
    while (cursor < sorted.size() && sorted[cursor]->window_start < hi)
      current.push_back(sorted[cursor++]);

    PeriodReport pr;
    pr.index = k;
    pr.start_s = lo;
    pr.n_scenes = current.size();
    pr.overfit_prone = !current.empty() && current.size() < kOverfitSceneThreshold;

    if (current.empty()) {
      log.add(RunLog::Line("period_eval").kv("period", k).kv("n", std::size_t{0}));
      result.periods.push_back(pr);
      continue;
    }

    // evaluate first, always
    const EvalPairs pairs = collect_eval_pairs(model, current, plan.task);
    if (plan.task == Task::eta ? !pairs.eta.empty() : !pairs.traj.empty()) {
      pr.eval = (plan.task == Task::eta) ? aggregate_eta(pairs.eta)
                                         : aggregate_trajectory(pairs.traj, pairs.spans);
      pooled.traj.insert(pooled.traj.end(), pairs.traj.begin(), pairs.traj.end());
      pooled.eta.insert(pooled.eta.end(), pairs.eta.begin(), pairs.eta.end());
      pooled.spans += pairs.spans;
    }
    {
      auto line = RunLog::Line("period_eval").kv("period", k).kv("n", current.size());
      if (pr.eval) {
        if (pr.eval->he_nm) line.kv("he_nm", *pr.eval->he_nm);
        if (pr.eval->ve_ft) line.kv("ve_ft", *pr.eval->ve_ft);
        if (pr.eval->mae_s) line.kv("mae_s", *pr.eval->mae_s);
        if (pr.eval->rmse_s) line.kv("rmse_s", *pr.eval->rmse_s);
      }
      line.kv("overfit_prone", std::size_t{pr.overfit_prone ? 1u : 0u});
      log.add(line);
    }

    // then train on the period
    ExperimentPlan period_plan = plan;
    period_plan.mode = Mode::finetune;
    period_plan.seed = Rng(plan.seed).child("period", k).seed();
    SceneSplit period_split;
    period_split.train = current;
    if (plan.task == Task::eta && !scaler_set) {
      std::vector<double> labels;
      for (const Scene* sc : current)
        for (const auto& e : eta_examples(*sc)) labels.push_back(e.label_s);
      if (!labels.empty()) {
        model.eta_scaler = LabelScaler::fit(labels);
        scaler_set = true;
      }
    }
    try {
      run_task(model, period_split, period_plan, log);
      pr.trained = true;
    } catch (const std::invalid_argument&) {
      // nothing trainable in this period
    }
    log.add(RunLog::Line("period_train")
                .kv("period", k)
                .kv("n", current.size())
                .kv("trained", std::size_t{pr.trained ? 1u : 0u})
                .kv("epochs", period_plan.epochs));
    result.periods.push_back(pr);
  }

  if (plan.task == Task::eta) {
    if (!pooled.eta.empty()) result.overall = aggregate_eta(pooled.eta);
  } else {
    if (!pooled.traj.empty()) result.overall = aggregate_trajectory(pooled.traj, pooled.spans);
  }
  return result;
}

}  // namespace mabert
