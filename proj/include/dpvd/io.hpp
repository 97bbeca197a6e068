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

#ifndef DPVD_IO_H_
#define DPVD_IO_H_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dpvd/config.hpp"
#include "dpvd/trainer.hpp"

namespace dpvd {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_csv_double(std::string_view field) {
  double out = 0.0;
  const char* first = field.data();
  const char* last = first + field.size();
  bool negative = false;
  if (first != last && (*first == '+' || *first == '-')) {
    negative = *first == '-';
    ++first;
  }
  const std::string_view rest(first, static_cast<std::size_t>(last - first));
  if (rest == "inf") {
    return negative ? -std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::infinity();
  }
  if (rest == "nan") return std::numeric_limits<double>::quiet_NaN();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw IoError("bad numeric field '" + std::string(field) + "'");
  }
  return negative ? -out : out;
}

inline std::uint64_t parse_csv_u64(std::string_view field) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(),
                                   out);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw IoError("bad integer field '" + std::string(field) + "'");
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != table.header.size()) {
      throw IoError("ragged CSV row in " + path.string());
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void expect_header(const CsvTable& table,
                          const std::vector<std::string>& want,
                          const std::filesystem::path& path) {
  if (table.header != want) {
    throw IoError("unexpected CSV header in " + path.string());
  }
}

// Commas and newlines would break the one-line-per-record format.
inline std::string sanitize_field(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

}  // namespace detail

inline const std::vector<std::string>& report_csv_header() {
  static const std::vector<std::string> kHeader = {
      "epoch", "elbo", "train_acc", "test_acc", "rho_spent", "eps_spent"};
  return kHeader;
}

inline void write_report_csv(const std::filesystem::path& path,
                             const std::vector<EpochRow>& rows) {
  std::ofstream out = detail::open_out(path);
  out << "epoch,elbo,train_acc,test_acc,rho_spent,eps_spent\n";
  for (const EpochRow& r : rows) {
    out << r.epoch << ',' << format_double(r.elbo) << ','
        << format_double(r.train_acc) << ',' << format_double(r.test_acc)
        << ',' << format_double(r.rho_spent) << ','
        << format_double(r.eps_spent) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<EpochRow> read_report_csv(
    const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  detail::expect_header(table, report_csv_header(), path);
  std::vector<EpochRow> rows;
  rows.reserve(table.rows.size());
  for (const auto& fields : table.rows) {
    EpochRow r;
    r.epoch = static_cast<std::size_t>(parse_csv_u64(fields[0]));
    r.elbo = parse_csv_double(fields[1]);
    r.train_acc = parse_csv_double(fields[2]);
    r.test_acc = parse_csv_double(fields[3]);
    r.rho_spent = parse_csv_double(fields[4]);
    r.eps_spent = parse_csv_double(fields[5]);
    rows.push_back(r);
  }
  return rows;
}

// Config echo plus final metrics. Wall time is deliberately excluded so a
// rerun with the same seed produces a byte-identical file.
inline nlohmann::json make_train_summary(const std::string& dataset,
                                         const TrainConfig& cfg,
                                         const TrainReport& report) {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["mode"] = train_mode_name(cfg.mode);
  j["method"] = method_name(cfg.method);
  j["epochs"] = cfg.epochs;
  j["minibatch"] = cfg.minibatch;
  j["hidden"] = cfg.hidden;
  j["lr0"] = cfg.lr0;
  j["decay"] = cfg.decay;
  j["clip_c"] = cfg.clip_c;
  j["kl_weight"] = cfg.kl_weight;
  j["init_alpha"] = cfg.init_alpha;
  j["epsilon"] = cfg.epsilon_total;
  j["delta"] = cfg.delta_total;
  j["sigma_override"] =
      cfg.sigma_override ? nlohmann::json(*cfg.sigma_override)
                         : nlohmann::json(nullptr);
  j["learn_zeta"] = cfg.learn_zeta_private;
  j["eval_every"] = cfg.eval_every;
  j["seed"] = cfg.seed;
  j["sigma"] = report.sigma;
  j["noise_std"] = report.sigma > 0.0 ? 2.0 * cfg.clip_c * report.sigma : 0.0;
  j["steps"] = report.steps;
  j["final_train_acc"] = report.final_train_acc;
  j["final_test_acc"] = report.final_test_acc;
  // Non-finite spend (non-private runs) becomes JSON null.
  j["rho_spent"] = std::isfinite(report.rho_spent)
                       ? nlohmann::json(report.rho_spent)
                       : nlohmann::json(nullptr);
  j["eps_spent"] = std::isfinite(report.eps_spent)
                       ? nlohmann::json(report.eps_spent)
                       : nlohmann::json(nullptr);
  return j;
}

inline void write_json(const std::filesystem::path& path,
                       const nlohmann::json& j) {
  std::ofstream out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("short write to " + path.string());
}

struct SigmaCurveRow {
  double epsilon = 0.0;
  double sigma_ac = 0.0;
  double sigma_zcdp = 0.0;
};

inline void write_sigma_curve_csv(const std::filesystem::path& path,
                                  const std::vector<SigmaCurveRow>& rows) {
  std::ofstream out = detail::open_out(path);
  out << "epsilon,sigma_ac,sigma_zcdp\n";
  for (const SigmaCurveRow& r : rows) {
    out << format_double(r.epsilon) << ',' << format_double(r.sigma_ac) << ','
        << format_double(r.sigma_zcdp) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<SigmaCurveRow> read_sigma_curve_csv(
    const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  detail::expect_header(table, {"epsilon", "sigma_ac", "sigma_zcdp"}, path);
  std::vector<SigmaCurveRow> rows;
  for (const auto& fields : table.rows) {
    rows.push_back({parse_csv_double(fields[0]), parse_csv_double(fields[1]),
                    parse_csv_double(fields[2])});
  }
  return rows;
}

// One aggregate line per (mode arm, epsilon, sweep value, epoch): mean and
// sample std over the repeats that succeeded.
struct AggregateRow {
  std::string mode;
  double epsilon = 0.0;  // +inf for non-private arms
  std::string sweep_param = "none";
  double sweep_value = 0.0;  // NaN when no sweep
  std::size_t epoch = 0;
  std::size_t runs = 0;
  double mean_train_acc = 0.0;
  double std_train_acc = 0.0;
  double mean_test_acc = 0.0;
  double std_test_acc = 0.0;
  double mean_eps_spent = 0.0;
  double mean_rho_spent = 0.0;
};

inline const std::vector<std::string>& aggregate_csv_header() {
  static const std::vector<std::string> kHeader = {
      "mode",          "epsilon",       "sweep_param",   "sweep_value",
      "epoch",         "runs",          "mean_train_acc", "std_train_acc",
      "mean_test_acc", "std_test_acc",  "mean_eps_spent", "mean_rho_spent"};
  return kHeader;
}

inline void write_aggregate_csv(const std::filesystem::path& path,
                                const std::vector<AggregateRow>& rows) {
  std::ofstream out = detail::open_out(path);
  out << "mode,epsilon,sweep_param,sweep_value,epoch,runs,mean_train_acc,"
         "std_train_acc,mean_test_acc,std_test_acc,mean_eps_spent,"
         "mean_rho_spent\n";
  for (const AggregateRow& r : rows) {
    out << detail::sanitize_field(r.mode) << ',' << format_double(r.epsilon)
        << ',' << r.sweep_param << ',' << format_double(r.sweep_value) << ','
        << r.epoch << ',' << r.runs << ',' << format_double(r.mean_train_acc)
        << ',' << format_double(r.std_train_acc) << ','
        << format_double(r.mean_test_acc) << ','
        << format_double(r.std_test_acc) << ','
        << format_double(r.mean_eps_spent) << ','
        << format_double(r.mean_rho_spent) << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<AggregateRow> read_aggregate_csv(
    const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  detail::expect_header(table, aggregate_csv_header(), path);
  std::vector<AggregateRow> rows;
  for (const auto& f : table.rows) {
    AggregateRow r;
    r.mode = f[0];
    r.epsilon = parse_csv_double(f[1]);
    r.sweep_param = f[2];
    r.sweep_value = parse_csv_double(f[3]);
    r.epoch = static_cast<std::size_t>(parse_csv_u64(f[4]));
    r.runs = static_cast<std::size_t>(parse_csv_u64(f[5]));
    r.mean_train_acc = parse_csv_double(f[6]);
    r.std_train_acc = parse_csv_double(f[7]);
    r.mean_test_acc = parse_csv_double(f[8]);
    r.std_test_acc = parse_csv_double(f[9]);
    r.mean_eps_spent = parse_csv_double(f[10]);
    r.mean_rho_spent = parse_csv_double(f[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dpvd

#endif  // DPVD_IO_H_
