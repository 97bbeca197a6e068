// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command line front end. Subcommands: train, eval, accountant, experiment.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 privacy budget infeasible.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "dpvd/accountant.hpp"
#include "dpvd/config.hpp"
#include "dpvd/dataset.hpp"
#include "dpvd/experiment.hpp"
#include "dpvd/io.hpp"
#include "dpvd/network.hpp"
#include "dpvd/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBudget = 3;

// Every value-carrying flag maps onto a config-file key, so "command line
// overrides config file" is literally a map overwrite before parsing.
struct KeyedFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    options[key] = cmd->add_option(flag, values[key], help);
  }

  void apply(dpvd::KvMap* kv) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) (*kv)[key] = values.at(key);
    }
  }
};

void add_data_flags(CLI::App* cmd, KeyedFlags* flags, bool* header_flag) {
  flags->add(cmd, "--dataset", "dataset", "digits or mnist");
  flags->add(cmd, "--digits-path", "digits_path", "DIGITS CSV location");
  flags->add(cmd, "--mnist-train-images", "mnist_train_images",
             "IDX image file");
  flags->add(cmd, "--mnist-train-labels", "mnist_train_labels",
             "IDX label file");
  flags->add(cmd, "--mnist-test-images", "mnist_test_images",
             "IDX image file");
  flags->add(cmd, "--mnist-test-labels", "mnist_test_labels",
             "IDX label file");
  cmd->add_flag("--header", *header_flag, "skip one leading CSV line");
}

void add_train_flags(CLI::App* cmd, KeyedFlags* flags) {
  flags->add(cmd, "--mode", "mode", "dpvd, svi_no_dropout, or nonprivate");
  flags->add(cmd, "--method", "method", "accounting method: zcdp or ac");
  flags->add(cmd, "--epsilon", "epsilon", "total privacy budget");
  flags->add(cmd, "--delta", "delta", "total privacy slack");
  flags->add(cmd, "--sigma", "sigma",
             "noise multiplier override (skips budget solving)");
  flags->add(cmd, "--epochs", "epochs", "training epochs");
  flags->add(cmd, "--minibatch", "minibatch", "examples per step");
  flags->add(cmd, "--hidden", "hidden", "hidden layer sizes, comma list");
  flags->add(cmd, "--lr0", "lr0", "initial step size");
  flags->add(cmd, "--decay", "decay", "step size decay exponent");
  flags->add(cmd, "--clip-c", "clip_c", "per-example gradient clip bound");
  flags->add(cmd, "--kl-weight", "kl_weight", "KL term weight");
  flags->add(cmd, "--init-alpha", "init_alpha",
             "initial dropout rate (nonprivate mode)");
  flags->add(cmd, "--eval-every", "eval_every", "epochs between report rows");
  flags->add(cmd, "--seed", "seed", "master RNG seed");
}

struct TrainCli {
  std::string config;
  std::string out_dir = "out";
  KeyedFlags flags;
  bool header = false;
  bool no_dropout = false;
  bool learn_zeta = false;
};

int run_train(const TrainCli& args) {
  dpvd::KvMap kv =
      args.config.empty() ? dpvd::KvMap{} : dpvd::parse_kv_file(args.config);
  args.flags.apply(&kv);
  if (args.header) kv["header"] = "true";
  if (args.learn_zeta) kv["learn_zeta"] = "true";
  if (args.no_dropout) kv["mode"] = "svi_no_dropout";

  dpvd::KvReader reader(std::move(kv));
  dpvd::DataConfig data;
  dpvd::apply_data_keys(reader, &data);
  dpvd::TrainConfig cfg;
  dpvd::apply_train_keys(reader, &cfg);
  reader.finish();

  const auto [train_data, test_data] = dpvd::load_datasets(data);
  std::cout << "dataset " << data.dataset << ": " << train_data.size()
            << " train / " << test_data.size() << " test, mode "
            << dpvd::train_mode_name(cfg.mode) << std::endl;

  const dpvd::TrainResult result = dpvd::train(train_data, test_data, cfg);

  const std::filesystem::path out(args.out_dir);
  dpvd::write_report_csv(out / "report.csv", result.report.rows);
  dpvd::write_json(out / "summary.json",
                   dpvd::make_train_summary(data.dataset, cfg, result.report));
  dpvd::save_checkpoint(result.net, out / "checkpoint.bin");

  std::cout << "steps " << result.report.steps << ", sigma "
            << dpvd::format_double(result.report.sigma) << ", train_acc "
            << dpvd::format_double(result.report.final_train_acc)
            << ", test_acc "
            << dpvd::format_double(result.report.final_test_acc)
            << ", eps_spent "
            << dpvd::format_double(result.report.eps_spent) << "\n"
            << "artifacts in " << out.string() << std::endl;
  return kExitOk;
}

struct EvalCli {
  std::string checkpoint;
  std::string split = "test";
  KeyedFlags flags;
  bool header = false;
};

int run_eval(const EvalCli& args) {
  if (args.split != "train" && args.split != "test") {
    throw dpvd::ConfigError("--split must be train or test");
  }
  dpvd::KvMap kv;
  args.flags.apply(&kv);
  if (args.header) kv["header"] = "true";
  dpvd::KvReader reader(std::move(kv));
  dpvd::DataConfig data;
  dpvd::apply_data_keys(reader, &data);
  reader.finish();

  dpvd::Network net;
  try {
    net = dpvd::load_checkpoint(args.checkpoint);
  } catch (const std::exception& e) {
    // A bad or missing checkpoint is a configuration problem.
    throw dpvd::ConfigError(e.what());
  }
  const auto [train_data, test_data] = dpvd::load_datasets(data);
  const dpvd::LabeledDataset& ds =
      args.split == "train" ? train_data : test_data;
  if (net.input_dim() != ds.features.cols()) {
    throw dpvd::ConfigError("checkpoint input size " +
                            std::to_string(net.input_dim()) +
                            " does not match dataset features " +
                            std::to_string(ds.features.cols()));
  }

  nlohmann::json j;
  j["dataset"] = data.dataset;
  j["split"] = args.split;
  j["examples"] = ds.size();
  j["accuracy"] = dpvd::evaluate(net, ds);
  std::cout << j.dump(2) << std::endl;
  return kExitOk;
}

struct AccountantCli {
  std::vector<double> epsilons = {10.0, 1.0, 0.1};
  double delta = 1e-5;
  double nu = 0.0;
  std::uint64_t iterations = 0;
  double epochs = 0.0;
  double clip_c = 2.0;
  std::string out;
};

int run_accountant(const AccountantCli& args) {
  if (!(args.nu > 0.0 && args.nu <= 1.0)) {
    throw dpvd::ConfigError("--nu must be in (0, 1]");
  }
  std::uint64_t iterations = args.iterations;
  if (iterations == 0) {
    if (!(args.epochs > 0.0)) {
      throw dpvd::ConfigError("need --iterations or --epochs");
    }
    iterations = static_cast<std::uint64_t>(
        std::llround(args.epochs / args.nu));
  }
  if (args.epsilons.empty()) {
    throw dpvd::ConfigError("--epsilon grid must be nonempty");
  }

  std::vector<dpvd::SigmaCurveRow> rows;
  std::cout << "epsilon,sigma_ac,sigma_zcdp\n";
  for (double eps : args.epsilons) {
    dpvd::PrivacyParams params;
    params.epsilon_total = eps;
    params.delta_total = args.delta;
    params.clip_c = args.clip_c;
    params.sampling_nu = args.nu;
    params.iterations_t = iterations;

    params.method = dpvd::AccountingMethod::kAdvancedComposition;
    const double sigma_ac = dpvd::solve_sigma(params);
    params.method = dpvd::AccountingMethod::kZcdp;
    const double sigma_zcdp = dpvd::solve_sigma(params);

    rows.push_back({eps, sigma_ac, sigma_zcdp});
    std::cout << dpvd::format_double(eps) << ','
              << dpvd::format_double(sigma_ac) << ','
              << dpvd::format_double(sigma_zcdp) << '\n';
  }
  if (!args.out.empty()) {
    dpvd::write_sigma_curve_csv(args.out, rows);
    std::cout << "wrote " << args.out << std::endl;
  }
  return kExitOk;
}

struct ExperimentCli {
  std::string spec_file;
  std::string out_dir = "out";
  KeyedFlags flags;
  bool header = false;
};

int run_experiment_cmd(const ExperimentCli& args) {
  dpvd::KvMap kv = dpvd::parse_kv_file(args.spec_file);
  args.flags.apply(&kv);
  if (args.header) kv["header"] = "true";
  const dpvd::ExperimentSpec spec =
      dpvd::experiment_spec_from_kv(std::move(kv));

  const auto [train_data, test_data] = dpvd::load_datasets(spec.data);
  std::cout << "dataset " << spec.data.dataset << ": " << train_data.size()
            << " train / " << test_data.size() << " test, "
            << dpvd::plan_runs(spec).size() << " runs" << std::endl;

  const dpvd::ExperimentResult result = dpvd::run_experiment(
      spec, train_data, test_data, std::filesystem::path(args.out_dir),
      [](const dpvd::RunRecord& r) {
        if (r.ok) {
          std::cout << r.plan.label << ": test_acc "
                    << dpvd::format_double(r.report.final_test_acc)
                    << ", eps_spent "
                    << dpvd::format_double(r.report.eps_spent) << std::endl;
        } else {
          std::cout << r.plan.label << ": FAILED (" << r.error << ")"
                    << std::endl;
        }
      });

  std::size_t ok = 0;
  for (const auto& r : result.records) ok += r.ok ? 1 : 0;
  std::cout << ok << "/" << result.records.size() << " runs succeeded, "
            << "artifacts in " << args.out_dir << std::endl;
  return ok > 0 ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private variational dropout trainer"};
  app.require_subcommand(1);

  TrainCli train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--config", train_args.config,
                        "key = value config file");
  train_cmd->add_option("--out-dir", train_args.out_dir,
                        "artifact directory");
  add_data_flags(train_cmd, &train_args.flags, &train_args.header);
  add_train_flags(train_cmd, &train_args.flags);
  train_cmd->add_flag("--no-dropout", train_args.no_dropout,
                      "shorthand for --mode svi_no_dropout");
  train_cmd->add_flag("--learn-zeta", train_args.learn_zeta,
                      "learn zeta during private training (no privacy "
                      "claim for zeta)");

  EvalCli eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model file")
      ->required();
  eval_cmd->add_option("--split", eval_args.split, "train or test");
  add_data_flags(eval_cmd, &eval_args.flags, &eval_args.header);

  AccountantCli acct_args;
  CLI::App* acct_cmd = app.add_subcommand(
      "accountant", "solve noise multipliers for an epsilon grid");
  acct_cmd->add_option("--epsilon", acct_args.epsilons,
                       "epsilon grid (repeatable)");
  acct_cmd->add_option("--delta", acct_args.delta, "privacy slack");
  acct_cmd->add_option("--nu", acct_args.nu, "subsampling ratio s/n")
      ->required();
  acct_cmd->add_option("--iterations", acct_args.iterations,
                       "total training steps T");
  acct_cmd->add_option("--epochs", acct_args.epochs,
                       "epochs (T = epochs / nu)");
  acct_cmd->add_option("--clip-c", acct_args.clip_c, "clip bound");
  acct_cmd->add_option("--out", acct_args.out, "sigma curve CSV path");

  ExperimentCli exp_args;
  CLI::App* exp_cmd =
      app.add_subcommand("experiment", "run a training grid and aggregate");
  exp_cmd->add_option("--spec", exp_args.spec_file, "experiment spec file")
      ->required();
  exp_cmd->add_option("--out-dir", exp_args.out_dir, "artifact directory");
  add_data_flags(exp_cmd, &exp_args.flags, &exp_args.header);
  exp_args.flags.add(exp_cmd, "--repeats", "repeats", "runs per grid cell");
  exp_args.flags.add(exp_cmd, "--seed-base", "seed_base",
                     "base seed for per-run derivation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (acct_cmd->parsed()) return run_accountant(acct_args);
    if (exp_cmd->parsed()) return run_experiment_cmd(exp_args);
    return kExitConfig;
  } catch (const dpvd::BudgetError& e) {
    std::cerr << "budget error: " << e.what() << std::endl;
    return kExitBudget;
  } catch (const dpvd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const dpvd::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
}
