#pragma once

#include <string>
#include <vector>

#include "mabert/track_io.hpp"
#include "mabert/training.hpp"

namespace mabert {

inline std::string metric_cell(const std::optional<double>& v) {
  return v ? fmt_g(*v) : "";
}

/// One labeled evaluation result, a cell group in the comparison table.
struct LabeledReport {
  std::string airport;
  std::string method;
  MetricsReport report;
};

/// Comparison CSV with one row per (airport, task, metric) and one column
/// per method, plus a `best` column naming the method with the smallest
/// value. Wall time stays in the run log; reports are byte-stable across
/// reruns.
inline std::string comparison_csv(const std::vector<LabeledReport>& reports) {
  std::vector<std::string> methods;
  for (const auto& r : reports)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);

  struct RowKey {
    std::string airport;
    Task task;
    std::string metric;
  };
  auto value_of = [](const MetricsReport& rep, const std::string& metric)
      -> std::optional<double> {
    if (metric == "he_nm") return rep.he_nm;
    if (metric == "ve_ft") return rep.ve_ft;
    if (metric == "mae_s") return rep.mae_s;
    return rep.rmse_s;
  };

  std::vector<RowKey> rows;
  auto add_row = [&](const std::string& airport, Task task, const std::string& metric) {
    for (const auto& r : rows)
      if (r.airport == airport && r.task == task && r.metric == metric) return;
    rows.push_back({airport, task, metric});
  };
  for (const auto& r : reports) {
    if (r.report.he_nm) add_row(r.airport, r.report.task, "he_nm");
    if (r.report.ve_ft) add_row(r.airport, r.report.task, "ve_ft");
    if (r.report.mae_s) add_row(r.airport, r.report.task, "mae_s");
    if (r.report.rmse_s) add_row(r.airport, r.report.task, "rmse_s");
  }

  std::string out = "airport,task,metric";
  for (const auto& m : methods) out += "," + m;
  out += ",best\n";
  for (const auto& row : rows) {
    out += row.airport;
    out += ",";
    out += task_name(row.task);
    out += "," + row.metric;
    std::string best;
    double best_v = 0.0;
    for (const auto& m : methods) {
      std::optional<double> v;
      for (const auto& r : reports)
        if (r.airport == row.airport && r.method == m && r.report.task == row.task) {
          v = value_of(r.report, row.metric);
          break;
        }
      out += ",";
      if (v) {
        out += fmt_g(*v);
        if (best.empty() || *v < best_v) {
          best = m;
          best_v = *v;
        }
      }
    }
    out += "," + best + "\n";
  }
  return out;
}

inline void write_comparison_csv(const std::string& path,
                                 const std::vector<LabeledReport>& reports) {
  atomic_write(path, comparison_csv(reports));
}

/// Metrics CSV: one row per labeled report, fixed columns. Wall time is
/// deliberately not exported so identical runs produce identical bytes.
inline std::string metrics_csv(const std::vector<LabeledReport>& reports) {
  std::string out = "airport,method,task,he_nm,ve_ft,mae_s,rmse_s,n_samples\n";
  for (const auto& r : reports) {
    out += r.airport + "," + r.method + "," + task_name(r.report.task);
    out += "," + metric_cell(r.report.he_nm);
    out += "," + metric_cell(r.report.ve_ft);
    out += "," + metric_cell(r.report.mae_s);
    out += "," + metric_cell(r.report.rmse_s);
    out += "," + std::to_string(r.report.n_samples) + "\n";
  }
  return out;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<LabeledReport>& reports) {
  atomic_write(path, metrics_csv(reports));
}

inline std::string loss_curve_csv(const std::vector<EpochLoss>& curve) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : curve)
    out += std::to_string(e.epoch) + "," + fmt_g(e.train) + "," + fmt_g(e.val) + "\n";
  return out;
}

inline void write_loss_curve_csv(const std::string& path,
                                 const std::vector<EpochLoss>& curve) {
  atomic_write(path, loss_curve_csv(curve));
}

/// Two-column (x, y) plot data, consumable by any plotting tool.
inline void write_xy(const std::string& path,
                     const std::vector<std::pair<double, double>>& points) {
  std::string out;
  for (const auto& [x, y] : points) out += fmt_g(x) + " " + fmt_g(y) + "\n";
  atomic_write(path, out);
}

inline std::string fraction_table_csv(const std::vector<FractionRow>& rows) {
  std::string out = "fraction,task,he_nm,ve_ft,mae_s,rmse_s,n_samples\n";
  for (const auto& r : rows) {
    out += fmt_g(r.fraction);
    out += ",";
    out += task_name(r.report.task);
    out += "," + metric_cell(r.report.he_nm);
    out += "," + metric_cell(r.report.ve_ft);
    out += "," + metric_cell(r.report.mae_s);
    out += "," + metric_cell(r.report.rmse_s);
    out += "," + std::to_string(r.report.n_samples) + "\n";
  }
  return out;
}

inline std::string period_table_csv(const IncrementalResult& res) {
  std::string out = "period,start_s,n_scenes,trained,overfit_prone,he_nm,ve_ft,mae_s,rmse_s\n";
  for (const auto& p : res.periods) {
    out += std::to_string(p.index) + "," + std::to_string(p.start_s) + "," +
           std::to_string(p.n_scenes) + "," + (p.trained ? "1" : "0") + "," +
           (p.overfit_prone ? "1" : "0");
    const MetricsReport empty;
    const MetricsReport& r = p.eval ? *p.eval : empty;
    out += "," + metric_cell(r.he_nm);
    out += "," + metric_cell(r.ve_ft);
    out += "," + metric_cell(r.mae_s);
    out += "," + metric_cell(r.rmse_s);
    out += "\n";
  }
  out += "overall,,,,";
  out += "," + metric_cell(res.overall.he_nm);
  out += "," + metric_cell(res.overall.ve_ft);
  out += "," + metric_cell(res.overall.mae_s);
  out += "," + metric_cell(res.overall.rmse_s);
  out += "\n";
  return out;
}

}  // namespace mabert
