// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPVD_EXPERIMENT_H_
#define DPVD_EXPERIMENT_H_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dpvd/config.hpp"
#include "dpvd/io.hpp"
#include "dpvd/trainer.hpp"

namespace dpvd {

// One scheduled training job, fully resolved from the experiment grid.
struct RunPlan {
  std::size_t cell = 0;  // index into the (mode, epsilon, sweep value) grid
  std::size_t repeat = 0;
  ModeSpec mode;
  double epsilon = std::numeric_limits<double>::infinity();
  double sweep_value = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  TrainConfig cfg;
  std::string label;
};

inline std::uint64_t run_seed(std::uint64_t base, std::size_t cell,
                              std::size_t repeat) {
  Rng rng(base + 0x9e3779b97f4a7c15ull * (cell + 1) +
          0xc2b2ae3d27d4eb4full * (repeat + 1));
  return rng.next_u64();
}

namespace detail {

inline std::string label_number(double v) {
  std::string s = format_double(v);
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
    if (c == '+') c = '_';
  }
  return s;
}

inline void apply_sweep_value(SweepParam sweep, double value,
                              TrainConfig* cfg) {
  switch (sweep) {
    case SweepParam::kNone:
      break;
    case SweepParam::kHiddenUnits:
      cfg->hidden = {static_cast<std::size_t>(std::llround(value))};
      break;
    case SweepParam::kEpochs:
      cfg->epochs = static_cast<std::size_t>(std::llround(value));
      break;
    case SweepParam::kClipC:
      cfg->clip_c = value;
      break;
    case SweepParam::kMinibatch:
      cfg->minibatch = static_cast<std::size_t>(std::llround(value));
      break;
  }
}

}  // namespace detail

// Grid order: modes x epsilons x sweep values, then repeats within each
// cell. Non-private arms ignore the epsilon grid (one cell per sweep value).
inline std::vector<RunPlan> plan_runs(const ExperimentSpec& spec) {
  const std::vector<double> sweep_values =
      spec.sweep == SweepParam::kNone
          ? std::vector<double>{std::numeric_limits<double>::quiet_NaN()}
          : spec.sweep_values;

  std::vector<RunPlan> plans;
  std::size_t cell = 0;
  for (const ModeSpec& mode : spec.modes) {
    const std::vector<double> epsilons =
        mode.is_private
            ? spec.epsilons
            : std::vector<double>{std::numeric_limits<double>::infinity()};
    for (double eps : epsilons) {
      for (double sv : sweep_values) {
        for (std::size_t rep = 0; rep < spec.repeats; ++rep) {
          RunPlan plan;
          plan.cell = cell;
          plan.repeat = rep;
          plan.mode = mode;
          plan.epsilon = eps;
          plan.sweep_value = sv;
          plan.cfg = spec.base;
          plan.cfg.mode = mode.mode;
          plan.cfg.method = mode.method;
          if (mode.is_private) plan.cfg.epsilon_total = eps;
          detail::apply_sweep_value(spec.sweep, sv, &plan.cfg);
          plan.seed = run_seed(spec.seed_base, cell, rep);
          plan.cfg.seed = plan.seed;
          plan.label = mode.label;
          if (mode.is_private) {
            plan.label += "_eps" + detail::label_number(eps);
          }
          if (spec.sweep != SweepParam::kNone) {
            plan.label += std::string("_") + sweep_param_name(spec.sweep) +
                          detail::label_number(sv);
          }
          plan.label += "_rep" + std::to_string(rep);
          plans.push_back(std::move(plan));
        }
        ++cell;
      }
    }
  }
  return plans;
}

struct RunRecord {
  RunPlan plan;
  bool ok = false;
  std::string error;
  TrainReport report;
};

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::vector<AggregateRow> aggregate;
};

inline void write_runs_csv(const std::filesystem::path& path,
                           const std::vector<RunRecord>& records,
                           SweepParam sweep) {
  std::ofstream out = detail::open_out(path);
  out << "label,mode,epsilon,sweep_param,sweep_value,repeat,seed,status,"
         "error,sigma,final_train_acc,final_test_acc,rho_spent,eps_spent\n";
  constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
  for (const RunRecord& r : records) {
    const TrainReport& rep = r.report;
    out << detail::sanitize_field(r.plan.label) << ','
        << detail::sanitize_field(r.plan.mode.label) << ','
        << format_double(r.plan.epsilon) << ','
        << sweep_param_name(sweep) << ','
        << format_double(r.plan.sweep_value) << ',' << r.plan.repeat << ','
        << r.plan.seed << ',' << (r.ok ? "ok" : "error") << ','
        << detail::sanitize_field(r.error) << ','
        << format_double(r.ok ? rep.sigma : kNan) << ','
        << format_double(r.ok ? rep.final_train_acc : kNan) << ','
        << format_double(r.ok ? rep.final_test_acc : kNan) << ','
        << format_double(r.ok ? rep.rho_spent : kNan) << ','
        << format_double(r.ok ? rep.eps_spent : kNan) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

// Mean and sample std per (cell, epoch) over the successful repeats.
inline std::vector<AggregateRow> aggregate_records(
    const ExperimentSpec& spec, const std::vector<RunRecord>& records) {
  struct Accum {
    const RunPlan* plan = nullptr;
    std::vector<double> train_acc, test_acc;
    double eps_sum = 0.0, rho_sum = 0.0;
  };
  std::map<std::pair<std::size_t, std::size_t>, Accum> cells;
  for (const RunRecord& r : records) {
    if (!r.ok) continue;
    for (const EpochRow& row : r.report.rows) {
      Accum& acc = cells[{r.plan.cell, row.epoch}];
      if (acc.plan == nullptr) acc.plan = &r.plan;
      acc.train_acc.push_back(row.train_acc);
      acc.test_acc.push_back(row.test_acc);
      acc.eps_sum += row.eps_spent;
      acc.rho_sum += row.rho_spent;
    }
  }

  const auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const auto std_of = [](const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  std::vector<AggregateRow> rows;
  for (const auto& [key, acc] : cells) {
    AggregateRow row;
    row.mode = acc.plan->mode.label;
    row.epsilon = acc.plan->epsilon;
    row.sweep_param = sweep_param_name(spec.sweep);
    row.sweep_value = acc.plan->sweep_value;
    row.epoch = key.second;
    row.runs = acc.train_acc.size();
    row.mean_train_acc = mean_of(acc.train_acc);
    row.std_train_acc = std_of(acc.train_acc, row.mean_train_acc);
    row.mean_test_acc = mean_of(acc.test_acc);
    row.std_test_acc = std_of(acc.test_acc, row.mean_test_acc);
    row.mean_eps_spent = acc.eps_sum / static_cast<double>(row.runs);
    row.mean_rho_spent = acc.rho_sum / static_cast<double>(row.runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Runs the whole grid serially; a failed run is recorded and skipped by the
// aggregation, never fatal. With a non-empty out_dir every finished run has
// its artifacts on disk already (partial results survive interruption).
inline ExperimentResult run_experiment(
    const ExperimentSpec& spec, const LabeledDataset& train_data,
    const LabeledDataset& test_data, const std::filesystem::path& out_dir,
    const std::function<void(const RunRecord&)>& on_run = {}) {
  const bool write = !out_dir.empty();
  ExperimentResult result;
  for (RunPlan& plan : plan_runs(spec)) {
    RunRecord record;
    record.plan = std::move(plan);
    try {
      TrainResult res = train(train_data, test_data, record.plan.cfg);
      record.ok = true;
      record.report = std::move(res.report);
      if (write) {
        const auto run_dir = out_dir / "runs" / record.plan.label;
        write_report_csv(run_dir / "report.csv", record.report.rows);
        write_json(run_dir / "summary.json",
                   make_train_summary(spec.data.dataset, record.plan.cfg,
                                      record.report));
      }
    } catch (const std::exception& e) {
      record.error = e.what();
    }
    result.records.push_back(std::move(record));
    if (write) {
      write_runs_csv(out_dir / "runs.csv", result.records, spec.sweep);
    }
    if (on_run) on_run(result.records.back());
  }
  result.aggregate = aggregate_records(spec, result.records);
  if (write) write_aggregate_csv(out_dir / "aggregate.csv", result.aggregate);
  return result;
}

}  // namespace dpvd

#endif  // DPVD_EXPERIMENT_H_
