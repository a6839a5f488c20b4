#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "mabert/training.hpp"

using namespace mabert;

namespace {

ModelConfig tiny_config(Variant v = Variant::agent_aware) {
  ModelConfig c;
  c.variant = v;
  c.d = 8;
  c.d_ff = 16;
  c.n_layers = 2;
  c.h = 2;
  c.F = 3;
  c.T_max = 30;
  return c;
}

/// Small deterministic multi-agent dataset: straight descending tracks
/// offset per flight, spread over several windows.
std::vector<Scene> toy_scenes(std::size_t n_windows, std::size_t flights_per_window,
                              std::size_t len = 25) {
  std::vector<Trajectory> trajs;
  for (std::size_t w = 0; w < n_windows; ++w)
    for (std::size_t k = 0; k < flights_per_window; ++k) {
      Trajectory t;
      t.flight_id = "w" + std::to_string(w) + "f" + std::to_string(k);
      t.dt = 10;
      t.t0 = static_cast<std::int64_t>(w) * 300 + static_cast<std::int64_t>(k) * 20;
      t.airport_ref = {126.45, 37.46};
      for (std::size_t i = 0; i < len; ++i) {
        const double f = static_cast<double>(i);
        t.points.push_back({126.0 + 0.01 * f + 0.002 * static_cast<double>(k),
                            37.0 + 0.004 * f - 0.001 * static_cast<double>(w % 3),
                            12000.0 - 300.0 * f});
      }
      trajs.push_back(std::move(t));
    }
  return assemble_scenes(trajs, 30, 10);
}

ExperimentPlan quick_plan(Mode mode, Task task, std::size_t epochs, std::uint64_t seed) {
  ExperimentPlan p;
  p.mode = mode;
  p.task = task;
  p.epochs = epochs;
  p.lr = default_lr(mode, task);
  p.batch_size = 4;
  p.seed = seed;
  return p;
}

std::vector<double> flat_params(Model& m) {
  std::vector<double> flat;
  for (Param* p : m.params())
    for (double v : p->value) flat.push_back(v);
  return flat;
}

}  // namespace

TEST_CASE("chronological split has the right sizes and ordering") {
  const auto scenes = toy_scenes(20, 2);
  REQUIRE(scenes.size() >= 10);
  const SceneSplit split = chrono_split(scenes);
  CHECK(split.train.size() + split.val.size() + split.test.size() == scenes.size());
  CHECK(split.train.size() == static_cast<std::size_t>(0.8 * scenes.size()));
  for (const Scene* s : split.val)
    CHECK(s->window_start >= split.train.back()->window_start);
  for (const Scene* s : split.test)
    CHECK(s->window_start >= split.val.back()->window_start);
}

TEST_CASE("masked span loss only sees the masked slots") {
  const auto scenes = toy_scenes(1, 3);
  std::vector<const Scene*> ptrs = {&scenes[0]};
  const Normalizer norm = Normalizer::fit(ptrs);
  const SceneInput in = make_scene_input(normalize(scenes[0], norm));
  const SpanMask span{0, 3, 5};

  Rng init(7);
  Model m = Model::create(tiny_config(), init);
  DropoutCtx ctx;
  const EncoderTrace tr = m.encoder.forward(in, &span, ctx);
  const LossOut loss = masked_span_loss(tr.s_prime, in, span);

  // gradient is zero at every unmasked slot
  for (std::size_t t = 0; t < in.T; ++t)
    for (std::size_t n = 0; n < in.N; ++n) {
      const bool masked = (n == span.agent && t >= span.start && t < span.start + span.len);
      for (std::size_t f = 0; f < 3; ++f)
        if (!masked) CHECK(loss.grad(in.slot(t, n), f) == 0.0);
    }

  // perturbing unmasked targets leaves the loss unchanged
  SceneInput perturbed = in;
  for (std::size_t t = 0; t < in.T; ++t)
    for (std::size_t n = 0; n < in.N; ++n) {
      const bool masked = (n == span.agent && t >= span.start && t < span.start + span.len);
      if (!masked && in.slot_valid[in.slot(t, n)])
        perturbed.x(in.slot(t, n), 0) += 42.0;
    }
  CHECK(masked_span_loss(tr.s_prime, perturbed, span).value == loss.value);
}

TEST_CASE("pre-training drives the masked loss down on a small scene set") {
  const auto scenes = toy_scenes(10, 2);
  Rng init(11);
  Model m = Model::create(tiny_config(), init);
  ExperimentPlan plan = quick_plan(Mode::pretrain, Task::mask_recovery, 40, 5);
  RunLog log;
  const TrainResult res = pretrain(m, scenes, plan, log);
  REQUIRE(res.curve.size() == 40);
  CHECK(res.curve.back().train < res.curve.front().train);
  // validation loss is logged every epoch
  std::size_t epoch_lines = 0;
  for (const auto& line : log.lines())
    if (line.rfind("event=epoch", 0) == 0 && line.find("val_loss=") != std::string::npos)
      ++epoch_lines;
  CHECK(epoch_lines == 40);
}

TEST_CASE("pre-training is deterministic under a fixed seed") {
  const auto scenes = toy_scenes(6, 2);
  auto run = [&] {
    Rng init(13);
    Model m = Model::create(tiny_config(), init);
    ExperimentPlan plan = quick_plan(Mode::pretrain, Task::mask_recovery, 5, 99);
    RunLog log;
    pretrain(m, scenes, plan, log);
    return flat_params(m);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("trajectory metrics aggregate correctly") {
  // perfect recovery gives zero error
  std::vector<TrajectoryPair> perfect(5);
  for (auto& p : perfect) p.pred = p.truth = {126.1, 37.2, 8000.0};
  const MetricsReport zero = aggregate_trajectory(perfect, 5);
  CHECK(*zero.he_nm == 0.0);
  CHECK(*zero.ve_ft == 0.0);

  // hand-computed mean over a 3-sample toy set
  std::vector<TrajectoryPair> toy(3);
  for (int i = 0; i < 3; ++i) {
    toy[i].truth = {0.0, 0.0, 1000.0};
    toy[i].pred = {0.0, 0.0, 1000.0 + 100.0 * (i + 1)};
  }
  const MetricsReport rep = aggregate_trajectory(toy, 3);
  CHECK(*rep.ve_ft == Catch::Approx(200.0));
  CHECK(*rep.he_nm == 0.0);
  CHECK_THROWS(aggregate_trajectory({}, 0));
}

TEST_CASE("eta metrics aggregate correctly") {
  // MAE equals the hand-averaged absolute error; RMSE is always >= MAE
  const std::vector<std::pair<double, double>> pairs = {{100, 130}, {200, 190}, {50, 80}};
  const MetricsReport rep = aggregate_eta(pairs);
  CHECK(*rep.mae_s == Catch::Approx((30.0 + 10.0 + 30.0) / 3.0));
  CHECK(*rep.rmse_s >= *rep.mae_s);
  CHECK(rep.n_samples == 3);
}

TEST_CASE("eta labels come from the arrival time at the scene edge") {
  const auto scenes = toy_scenes(3, 2, 55);  // flights span two windows
  bool found_airborne = false, found_zero = false;
  for (const Scene& s : scenes) {
    for (const auto& ex : eta_examples(s)) {
      CHECK(ex.label_s >= 0.0);
      CHECK(s.entry_step[ex.agent] + s.valid_len[ex.agent] == s.T);
      if (ex.label_s > 0) found_airborne = true;
      if (ex.label_s == 0.0) found_zero = true;
    }
  }
  CHECK(found_airborne);
  CHECK(found_zero);  // a flight's final window ends at its arrival
}

TEST_CASE("eta fine-tuning trains and reports in seconds") {
  const auto scenes = toy_scenes(12, 2, 40);
  Rng init(17);
  Model m = Model::create(tiny_config(), init);
  ExperimentPlan plan = quick_plan(Mode::scratch, Task::eta, 6, 23);
  RunLog log;
  const TrainResult res = finetune_eta(m, scenes, plan, log);
  REQUIRE(m.decoder.has_value());
  REQUIRE(res.report.mae_s.has_value());
  CHECK(*res.report.rmse_s >= *res.report.mae_s);
  CHECK(res.report.n_samples > 0);

  // constant-predictor reference: the trained head must be in the same
  // league as predicting the training-label mean
  const SceneSplit split = chrono_split(scenes);
  std::vector<double> labels;
  for (const Scene* s : split.train)
    for (const auto& ex : eta_examples(*s)) labels.push_back(ex.label_s);
  double mean = 0.0;
  for (double v : labels) mean += v;
  mean /= static_cast<double>(labels.size());
  double const_mae = 0.0;
  std::size_t n = 0;
  for (const Scene* s : split.test)
    for (const auto& ex : eta_examples(*s)) {
      const_mae += std::abs(mean - ex.label_s);
      ++n;
    }
  REQUIRE(n > 0);
  const_mae /= static_cast<double>(n);
  INFO("model MAE " << *res.report.mae_s << " vs constant-predictor MAE " << const_mae);
  CHECK(*res.report.mae_s < 10.0 * (const_mae + 1.0));
}

TEST_CASE("trajectory fine-tuning runs after pre-training and reports HE/VE") {
  const auto scenes = toy_scenes(12, 2);
  Rng init(19);
  Model m = Model::create(tiny_config(), init);
  ExperimentPlan pre = quick_plan(Mode::pretrain, Task::mask_recovery, 15, 31);
  RunLog log;
  pretrain(m, scenes, pre, log);

  ExperimentPlan plan = quick_plan(Mode::finetune, Task::trajectory, 5, 37);
  const TrainResult res = finetune_trajectory(m, scenes, plan, log);
  REQUIRE(res.report.he_nm.has_value());
  CHECK(*res.report.he_nm >= 0.0);
  CHECK(*res.report.ve_ft >= 0.0);
  CHECK(res.curve.size() == 5);
}

TEST_CASE("evaluate is deterministic and rejects an empty test set") {
  const auto scenes = toy_scenes(6, 2);
  Rng init(23);
  Model m = Model::create(tiny_config(), init);
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  m.norm = Normalizer::fit(ptrs);
  const MetricsReport a = evaluate(m, ptrs, Task::trajectory);
  const MetricsReport b = evaluate(m, ptrs, Task::trajectory);
  CHECK(*a.he_nm == *b.he_nm);
  CHECK(*a.ve_ft == *b.ve_ft);
  CHECK_THROWS_WITH(evaluate(m, {}, Task::trajectory),
                    Catch::Matchers::ContainsSubstring("empty test set"));
}

TEST_CASE("fraction 1.0 reproduces the plain fine-tune bit for bit") {
  const auto scenes = toy_scenes(12, 2);
  Model pretrained = [&] {
    Rng init(29);
    Model m = Model::create(tiny_config(), init);
    ExperimentPlan pre = quick_plan(Mode::pretrain, Task::mask_recovery, 8, 41);
    RunLog log;
    pretrain(m, scenes, pre, log);
    return m;
  }();

  ExperimentPlan plan = quick_plan(Mode::finetune, Task::trajectory, 3, 43);

  Model plain = pretrained;
  RunLog log_plain;
  const TrainResult plain_res = finetune_trajectory(plain, scenes, plan, log_plain);

  RunLog log_frac;
  const auto rows = data_fraction_run(pretrained, scenes, {0.5, 1.0}, plan, log_frac);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].report.n_samples > 0);
  // exact equality: the fraction-1.0 path must replay the same training
  CHECK(*rows[1].report.he_nm == *plain_res.report.he_nm);
  CHECK(*rows[1].report.ve_ft == *plain_res.report.ve_ft);
}

TEST_CASE("fraction runs error out when a fraction yields no scenes") {
  const auto scenes = toy_scenes(3, 1);
  Rng init(31);
  Model m = Model::create(tiny_config(), init);
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  m.norm = Normalizer::fit(ptrs);
  ExperimentPlan plan = quick_plan(Mode::finetune, Task::trajectory, 1, 47);
  RunLog log;
  CHECK_THROWS(data_fraction_run(m, scenes, {0.01}, plan, log));
}

TEST_CASE("incremental runs evaluate every period before training on it") {
  // synthetic "year": twelve 30-day months of one window each
  std::vector<Trajectory> trajs;
  for (int month = 0; month < 12; ++month)
    for (int k = 0; k < 2; ++k) {
      Trajectory t;
      t.flight_id = "m" + std::to_string(month) + "k" + std::to_string(k);
      t.dt = 10;
      t.t0 = static_cast<std::int64_t>(month) * 30 * 86400 + k * 30;
      t.airport_ref = {126.45, 37.46};
      for (int i = 0; i < 25; ++i)
        t.points.push_back({126.0 + 0.01 * i, 37.0 + 0.004 * i, 12000.0 - 300.0 * i});
      trajs.push_back(std::move(t));
    }
  const auto scenes = assemble_scenes(trajs, 30, 10);

  Rng init(37);
  Model m = Model::create(tiny_config(), init);
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  m.norm = Normalizer::fit(ptrs);

  ExperimentPlan plan = quick_plan(Mode::incremental, Task::trajectory, 2, 53);
  RunLog log;
  const IncrementalResult res = incremental_run(m, scenes, Period::month, plan, log);
  CHECK(res.periods.size() == 12);

  // from the log: each period's evaluation precedes its training
  std::map<long, std::pair<int, int>> order;  // period -> (eval line, train line)
  int line_no = 0;
  for (const auto& line : log.lines()) {
    ++line_no;
    const bool is_eval = line.rfind("event=period_eval", 0) == 0;
    const bool is_train = line.rfind("event=period_train", 0) == 0;
    if (!is_eval && !is_train) continue;
    const auto pos = line.find("period=");
    REQUIRE(pos != std::string::npos);
    const long period = std::stol(line.substr(pos + 7));
    if (is_eval) order[period].first = line_no;
    if (is_train) order[period].second = line_no;
  }
  REQUIRE(order.size() == 12);
  for (const auto& [period, lines] : order) {
    CHECK(lines.first > 0);
    CHECK(lines.second > lines.first);
  }

  // sparse periods are flagged as overfit-prone
  for (const auto& p : res.periods)
    if (p.n_scenes > 0) CHECK(p.overfit_prone == (p.n_scenes < kOverfitSceneThreshold));

  CHECK(res.overall.he_nm.has_value());
}

TEST_CASE("empty periods are evaluate-only") {
  std::vector<Trajectory> trajs;
  for (int day : {0, 3})  // days 1 and 2 stay empty
    for (int k = 0; k < 2; ++k) {
      Trajectory t;
      t.flight_id = "d" + std::to_string(day) + "k" + std::to_string(k);
      t.dt = 10;
      t.t0 = static_cast<std::int64_t>(day) * 86400 + k * 30;
      t.airport_ref = {126.45, 37.46};
      for (int i = 0; i < 25; ++i)
        t.points.push_back({126.0 + 0.01 * i, 37.0 + 0.004 * i, 12000.0 - 300.0 * i});
      trajs.push_back(std::move(t));
    }
  const auto scenes = assemble_scenes(trajs, 30, 10);
  Rng init(41);
  Model m = Model::create(tiny_config(), init);
  std::vector<const Scene*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);
  m.norm = Normalizer::fit(ptrs);
  ExperimentPlan plan = quick_plan(Mode::incremental, Task::trajectory, 1, 59);
  RunLog log;
  const IncrementalResult res = incremental_run(m, scenes, Period::day, plan, log);
  REQUIRE(res.periods.size() == 4);
  CHECK(res.periods[1].n_scenes == 0);
  CHECK_FALSE(res.periods[1].trained);
  CHECK(res.periods[0].trained);
  CHECK(res.periods[3].trained);
}

TEST_CASE("plan validation and defaults follow the training recipes") {
  CHECK(default_lr(Mode::pretrain, Task::mask_recovery) == 1e-4);
  CHECK(default_lr(Mode::scratch, Task::trajectory) == 1e-4);
  CHECK(default_lr(Mode::finetune, Task::trajectory) == 2e-5);
  CHECK(default_lr(Mode::finetune, Task::eta) == 5e-5);
  CHECK(default_epochs(Mode::scratch) == 100);
  CHECK(default_epochs(Mode::finetune) == 10);

  ExperimentPlan p;
  p.data_fraction = 0.0;
  CHECK_THROWS(p.validate());
  p.data_fraction = 0.5;
  p.epochs = 0;
  CHECK_THROWS(p.validate());
}
