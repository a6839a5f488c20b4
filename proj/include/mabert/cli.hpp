#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mabert/checkpoint.hpp"
#include "mabert/config.hpp"
#include "mabert/reconstruct.hpp"
#include "mabert/report.hpp"
#include "mabert/scene_io.hpp"
#include "mabert/synthgen.hpp"
#include "mabert/training.hpp"

namespace mabert::cli {

inline ModelConfig model_config_from(const ConfigFile& cfg) {
  ModelConfig m;
  m.variant = variant_from(cfg.get_str("model.variant", "agent_aware"));
  m.d = cfg.get_u64("model.d", 32);
  m.d_ff = cfg.get_u64("model.d_ff", 64);
  m.n_layers = cfg.get_u64("model.n_layers", 2);
  m.h = cfg.get_u64("model.h", 4);
  m.F = cfg.get_u64("model.F", 3);
  m.T_max = cfg.get_u64("model.T_max", 60);
  m.dropout_pretrain = cfg.get_double("model.dropout_pretrain", 0.1);
  m.dropout_finetune = cfg.get_double("model.dropout_finetune", 0.0);
  m.validate();
  return m;
}

inline ExperimentPlan plan_from(const ConfigFile& cfg, Mode mode, Task task) {
  ExperimentPlan plan;
  plan.mode = mode;
  plan.task = task;
  plan.epochs = cfg.get_u64("plan.epochs", default_epochs(mode));
  plan.lr = cfg.get_double("plan.lr", default_lr(mode, task));
  plan.batch_size = cfg.get_u64("plan.batch_size", 8);
  plan.data_fraction = cfg.get_double("plan.data_fraction", 1.0);
  plan.update_period = period_from(cfg.get_str("plan.update_period", "month"));
  plan.seed = cfg.get_u64("seed");  // training subcommands require a seed
  plan.validate();
  return plan;
}

inline Provenance make_provenance(const std::string& command, const ConfigFile& cfg,
                                  const std::string& parent_hash) {
  Provenance prov;
  prov.command = command;
  prov.parent_hash = parent_hash.empty() ? "none" : parent_hash;
  prov.config = cfg.entries();
  return prov;
}

inline std::string out_path(const ConfigFile& cfg, const std::string& file) {
  const std::string dir = cfg.get_str("out");
  return (std::filesystem::path(dir) / file).string();
}

inline void write_run_log(const ConfigFile& cfg, const RunLog& log) {
  atomic_write(out_path(cfg, "run.log"), log.text());
}

inline void write_curves(const ConfigFile& cfg, const std::vector<EpochLoss>& curve) {
  write_loss_curve_csv(out_path(cfg, "loss_curve.csv"), curve);
  std::vector<std::pair<double, double>> train_xy, val_xy;
  for (const auto& e : curve) {
    train_xy.emplace_back(static_cast<double>(e.epoch), e.train);
    val_xy.emplace_back(static_cast<double>(e.epoch), e.val);
  }
  write_xy(out_path(cfg, "loss_train.xy"), train_xy);
  write_xy(out_path(cfg, "loss_val.xy"), val_xy);
}

// ---------------------------------------------------------------------------
// subcommands

inline int cmd_synth(const ConfigFile& cfg) {
  const std::uint64_t seed = cfg.get_u64("seed");
  const AirportFamily fam = make_airport_family(seed);
  struct Entry {
    const AirportSpec* spec;
    std::size_t days;
  };
  const std::vector<Entry> entries = {
      {&fam.a, static_cast<std::size_t>(cfg.get_u64("synth.days_a", 60))},
      {&fam.b, static_cast<std::size_t>(cfg.get_u64("synth.days_b", 20))},
      {&fam.c, static_cast<std::size_t>(cfg.get_u64("synth.days_c", 20))},
  };
  const double rate_scale = cfg.get_double("synth.rate_scale", 1.0);
  for (const auto& e : entries) {
    if (e.days == 0) continue;
    AirportSpec spec = *e.spec;
    spec.arrival_rate_per_hr *= rate_scale;
    const auto days = generate(spec, e.days, seed);
    std::vector<RawTrack> all;
    for (const auto& d : days)
      all.insert(all.end(), d.tracks.begin(), d.tracks.end());
    write_tracks_csv(out_path(cfg, "raw_" + spec.name + ".csv"), all);
    std::string meta;
    meta += "data.raw_csv = " + out_path(cfg, "raw_" + spec.name + ".csv") + "\n";
    meta += "data.airport_lon = " + fmt_g(spec.ref_point.lon) + "\n";
    meta += "data.airport_lat = " + fmt_g(spec.ref_point.lat) + "\n";
    atomic_write(out_path(cfg, spec.name + "_airport.cfg"), meta);
    std::cout << "airport " << spec.name << ": " << all.size() << " flights over " << e.days
              << " days -> " << out_path(cfg, "raw_" + spec.name + ".csv") << "\n";
  }
  return 0;
}

inline int cmd_preprocess(const ConfigFile& cfg) {
  const std::string raw_path = cfg.get_str("data.raw_csv");
  const GeoPoint ref{cfg.get_double("data.airport_lon"), cfg.get_double("data.airport_lat")};
  const std::int64_t dt = cfg.get_i64("data.dt", 10);
  const double cutoff = cfg.get_double("data.cutoff_nm", 70.0);
  ReconstructionConfig rc;
  rc.lambda2 = cfg.get_double("data.lambda2", 1.0);
  rc.lambda3 = cfg.get_double("data.lambda3", 0.1);
  const std::size_t t_max = cfg.get_u64("scene.T_max", 60);

  const auto tracks = read_tracks_csv(raw_path);
  std::vector<Trajectory> trajs;
  std::size_t dropped = 0;
  for (const auto& track : tracks) {
    try {
      trajs.push_back(resample_and_cut(reconstruct(track, rc), dt, ref, cutoff, track.flight_id));
    } catch (const std::runtime_error&) {
      ++dropped;  // too short after the cut
    }
  }
  if (trajs.empty()) throw std::runtime_error("preprocess: no usable trajectory in " + raw_path);
  write_trajectories_csv(out_path(cfg, "resampled.csv"), trajs);
  const auto scenes = assemble_scenes(trajs, t_max, dt);
  write_scenes(out_path(cfg, "scenes.scn"), scenes);
  std::cout << "preprocess: " << trajs.size() << " trajectories (" << dropped << " dropped), "
            << scenes.size() << " scenes -> " << out_path(cfg, "scenes.scn") << "\n";
  return 0;
}

inline int cmd_pretrain(const ConfigFile& cfg) {
  const auto scenes = read_scenes(cfg.get_str("data.scenes"));
  const ModelConfig mc = model_config_from(cfg);
  const ExperimentPlan plan = plan_from(cfg, Mode::pretrain, Task::mask_recovery);
  Rng rng(plan.seed);
  Rng init_rng = rng.child("model_init");
  Model model = Model::create(mc, init_rng);
  RunLog log;
  const TrainResult res = pretrain(model, scenes, plan, log);
  save_checkpoint(out_path(cfg, "checkpoint.ckpt"), model, make_provenance("pretrain", cfg, ""));
  write_curves(cfg, res.curve);
  write_run_log(cfg, log);
  std::cout << "pretrain: " << res.curve.size() << " epochs, final train loss "
            << fmt_g(res.curve.back().train) << ", val loss " << fmt_g(res.curve.back().val)
            << " -> " << out_path(cfg, "checkpoint.ckpt") << "\n";
  return 0;
}

struct LoadedParent {
  Model model;
  std::string hash;
};

inline LoadedParent load_parent(const ConfigFile& cfg) {
  const std::string path = cfg.get_str("checkpoint.parent");
  const ModelConfig expected = model_config_from(cfg);
  const bool check = cfg.has("model.d") || cfg.has("model.variant");
  LoadedCheckpoint loaded = load_checkpoint(path, check ? &expected : nullptr);
  return {std::move(loaded.model), loaded.self_hash};
}

inline int cmd_finetune(const ConfigFile& cfg) {
  const auto scenes = read_scenes(cfg.get_str("data.scenes"));
  const Task task = task_from(cfg.get_str("plan.task"));
  const bool scratch = !cfg.has("checkpoint.parent");
  const Mode mode = scratch ? Mode::scratch : Mode::finetune;
  const ExperimentPlan plan = plan_from(cfg, mode, task);

  Model model;
  std::string parent_hash;
  if (scratch) {
    Rng init_rng = Rng(plan.seed).child("model_init");
    model = Model::create(model_config_from(cfg), init_rng);
  } else {
    LoadedParent parent = load_parent(cfg);
    model = std::move(parent.model);
    parent_hash = parent.hash;
  }

  RunLog log;
  const TrainResult res = (task == Task::eta) ? finetune_eta(model, scenes, plan, log)
                                              : finetune_trajectory(model, scenes, plan, log);
  save_checkpoint(out_path(cfg, "checkpoint.ckpt"), model,
                  make_provenance(scratch ? "finetune(scratch)" : "finetune", cfg, parent_hash));
  write_curves(cfg, res.curve);
  const LabeledReport labeled{cfg.get_str("report.airport", "airport"),
                              cfg.get_str("report.method", variant_name(model.cfg.variant)),
                              res.report};
  write_metrics_csv(out_path(cfg, "metrics.csv"), {labeled});
  write_run_log(cfg, log);
  std::cout << "finetune(" << task_name(task) << "): metrics -> "
            << out_path(cfg, "metrics.csv") << "\n";
  return 0;
}

inline int cmd_evaluate(const ConfigFile& cfg) {
  const auto scenes = read_scenes(cfg.get_str("data.scenes"));
  const Task task = task_from(cfg.get_str("plan.task"));
  LoadedParent parent = load_parent(cfg);
  std::vector<const Scene*> eval_on;
  if (cfg.get_str("eval.split", "test") == "all") {
    for (const auto& s : scenes) eval_on.push_back(&s);
  } else {
    eval_on = chrono_split(scenes).test;
  }
  const MetricsReport rep = evaluate(parent.model, eval_on, task);
  const LabeledReport labeled{cfg.get_str("report.airport", "airport"),
                              cfg.get_str("report.method", variant_name(parent.model.cfg.variant)),
                              rep};
  write_metrics_csv(out_path(cfg, "metrics.csv"), {labeled});
  std::cout << "evaluate(" << task_name(task) << "): n=" << rep.n_samples << " -> "
            << out_path(cfg, "metrics.csv") << "\n";
  return 0;
}

inline int cmd_fraction(const ConfigFile& cfg) {
  const auto scenes = read_scenes(cfg.get_str("data.scenes"));
  const Task task = task_from(cfg.get_str("plan.task"));
  const ExperimentPlan plan = plan_from(cfg, Mode::finetune, task);
  const std::vector<double> fractions =
      cfg.get_double_list("plan.fractions", {0.2, 0.4, 0.6, 0.8, 1.0});
  LoadedParent parent = load_parent(cfg);
  RunLog log;
  const auto rows = data_fraction_run(parent.model, scenes, fractions, plan, log);
  atomic_write(out_path(cfg, "fraction_table.csv"), fraction_table_csv(rows));
  write_run_log(cfg, log);
  std::cout << "fraction: " << rows.size() << " rows -> "
            << out_path(cfg, "fraction_table.csv") << "\n";
  return 0;
}

inline int cmd_incremental(const ConfigFile& cfg) {
  const auto scenes = read_scenes(cfg.get_str("data.scenes"));
  const Task task = task_from(cfg.get_str("plan.task"));
  ExperimentPlan plan = plan_from(cfg, Mode::incremental, task);
  plan.epochs = cfg.get_u64("plan.epochs", 10);
  plan.lr = cfg.get_double("plan.lr", default_lr(Mode::finetune, task));
  LoadedParent parent = load_parent(cfg);
  RunLog log;
  const IncrementalResult res =
      incremental_run(parent.model, scenes, plan.update_period, plan, log);
  atomic_write(out_path(cfg, "period_metrics.csv"), period_table_csv(res));
  save_checkpoint(out_path(cfg, "checkpoint.ckpt"), parent.model,
                  make_provenance("incremental", cfg, parent.hash));
  write_run_log(cfg, log);
  std::cout << "incremental(" << period_name(plan.update_period) << "): "
            << res.periods.size() << " periods -> " << out_path(cfg, "period_metrics.csv")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"multi-agent transformer pipeline for terminal-airspace traffic"};
  app.require_subcommand(1);

  std::string config_path, out_override, ckpt_path;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  std::vector<std::string> sets;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration file (key = value lines)");
    sub->add_option("--out", out_override, "output directory (overrides config key 'out')");
    sub->add_option("--seed", seed_override, "seed override")->each([&](const std::string&) {
      seed_given = true;
    });
    sub->add_option("--set", sets, "override a config key, e.g. --set plan.epochs=5");
  };

  const std::vector<std::string> names = {"synth",    "preprocess",  "pretrain", "finetune",
                                          "evaluate", "fraction",    "incremental"};
  for (const auto& n : names) add_common(app.add_subcommand(n));
  CLI::App* inspect = app.add_subcommand("inspect", "print a checkpoint manifest");
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  std::vector<const char*> argv;
  argv.push_back("mabert");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (inspect->parsed()) {
      std::cout << inspect_checkpoint(ckpt_path) << "\n";
      return 0;
    }
    ConfigFile cfg = config_path.empty() ? ConfigFile()
                                         : ConfigFile::parse_file(config_path);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_given) cfg.set("seed", std::to_string(seed_override));
    if (!out_override.empty()) cfg.set("out", out_override);

    for (const auto& n : names)
      if (app.get_subcommand(n)->parsed()) {
        if (n == "synth") return cmd_synth(cfg);
        if (n == "preprocess") return cmd_preprocess(cfg);
        if (n == "pretrain") return cmd_pretrain(cfg);
        if (n == "finetune") return cmd_finetune(cfg);
        if (n == "evaluate") return cmd_evaluate(cfg);
        if (n == "fraction") return cmd_fraction(cfg);
        if (n == "incremental") return cmd_incremental(cfg);
      }
    throw std::runtime_error("no subcommand");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mabert::cli
