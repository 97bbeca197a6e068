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

#ifndef DPVD_CONFIG_H_
#define DPVD_CONFIG_H_

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpvd/accountant.hpp"
#include "dpvd/dataset.hpp"
#include "dpvd/trainer.hpp"

namespace dpvd {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using KvMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline double parse_config_double(const std::string& value,
                                  const std::string& key) {
  double out = 0.0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw ConfigError("config key '" + key + "': bad number '" + value + "'");
  }
  return out;
}

inline std::uint64_t parse_config_u64(const std::string& value,
                                      const std::string& key) {
  std::uint64_t out = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  const auto res = std::from_chars(first, last, out);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw ConfigError("config key '" + key + "': bad integer '" + value +
                      "'");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

// "key = value" lines; '#' starts a comment; blank lines ignored.
// Later occurrences of a key override earlier ones.
inline KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

inline KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

// Typed reads over a KvMap; tracks the consumed keys so finish() can reject
// unknown ones (typo protection).
class KvReader {
 public:
  explicit KvReader(KvMap kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key, std::string dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    return detail::parse_config_double(it->second, key);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    return detail::parse_config_u64(it->second, key);
  }

  std::size_t get_size(const std::string& key, std::size_t dflt) {
    return static_cast<std::size_t>(get_u64(key, dflt));
  }

  bool get_bool(const std::string& key, bool dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': bad boolean '" + v + "'");
  }

  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    std::vector<double> out;
    for (const std::string& item : detail::split_list(it->second)) {
      out.push_back(detail::parse_config_double(item, key));
    }
    if (out.empty()) {
      throw ConfigError("config key '" + key + "': empty list");
    }
    return out;
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         std::vector<std::size_t> dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    std::vector<std::size_t> out;
    for (const std::string& item : detail::split_list(it->second)) {
      out.push_back(
          static_cast<std::size_t>(detail::parse_config_u64(item, key)));
    }
    if (out.empty()) {
      throw ConfigError("config key '" + key + "': empty list");
    }
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> dflt) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    used_.insert(key);
    auto out = detail::split_list(it->second);
    if (out.empty()) {
      throw ConfigError("config key '" + key + "': empty list");
    }
    return out;
  }

  // Rejects keys nobody consumed.
  void finish() const {
    for (const auto& [key, value] : kv_) {
      if (!used_.count(key)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  }

 private:
  KvMap kv_;
  std::set<std::string> used_;
};

inline TrainMode parse_mode(const std::string& name) {
  if (name == "dpvd") return TrainMode::kDpvd;
  if (name == "svi" || name == "svi_no_dropout") {
    return TrainMode::kSviNoDropout;
  }
  if (name == "nonprivate") return TrainMode::kNonprivate;
  throw ConfigError("unknown mode '" + name +
                    "' (expected dpvd, svi_no_dropout, or nonprivate)");
}

inline AccountingMethod parse_method(const std::string& name) {
  if (name == "zcdp") return AccountingMethod::kZcdp;
  if (name == "ac") return AccountingMethod::kAdvancedComposition;
  throw ConfigError("unknown method '" + name + "' (expected zcdp or ac)");
}

inline const char* method_name(AccountingMethod m) {
  return m == AccountingMethod::kZcdp ? "zcdp" : "ac";
}

// Dataset selection and file locations.
struct DataConfig {
  std::string dataset = "digits";  // digits | mnist
  std::string digits_path = "data/digits.csv";
  bool header = false;  // skip one leading line in the CSV
  std::string mnist_train_images = "data/mnist/train-images-idx3-ubyte";
  std::string mnist_train_labels = "data/mnist/train-labels-idx1-ubyte";
  std::string mnist_test_images = "data/mnist/test-images-idx3-ubyte";
  std::string mnist_test_labels = "data/mnist/test-labels-idx1-ubyte";
};

inline void apply_data_keys(KvReader& kv, DataConfig* data) {
  data->dataset = kv.get_string("dataset", data->dataset);
  if (data->dataset != "digits" && data->dataset != "mnist") {
    throw ConfigError("unknown dataset '" + data->dataset +
                      "' (expected digits or mnist)");
  }
  data->digits_path = kv.get_string("digits_path", data->digits_path);
  data->header = kv.get_bool("header", data->header);
  data->mnist_train_images =
      kv.get_string("mnist_train_images", data->mnist_train_images);
  data->mnist_train_labels =
      kv.get_string("mnist_train_labels", data->mnist_train_labels);
  data->mnist_test_images =
      kv.get_string("mnist_test_images", data->mnist_test_images);
  data->mnist_test_labels =
      kv.get_string("mnist_test_labels", data->mnist_test_labels);
}

inline std::pair<LabeledDataset, LabeledDataset> load_datasets(
    const DataConfig& data) {
  if (data.dataset == "digits") {
    DigitsSplit split = load_digits_csv(data.digits_path, data.header);
    return {std::move(split.train), std::move(split.test)};
  }
  return {load_mnist_idx(data.mnist_train_images, data.mnist_train_labels,
                         "train"),
          load_mnist_idx(data.mnist_test_images, data.mnist_test_labels,
                         "test")};
}

inline void apply_train_keys(KvReader& kv, TrainConfig* cfg) {
  cfg->epochs = kv.get_size("epochs", cfg->epochs);
  cfg->minibatch = kv.get_size("minibatch", cfg->minibatch);
  cfg->hidden = kv.get_size_list("hidden", cfg->hidden);
  cfg->lr0 = kv.get_double("lr0", cfg->lr0);
  cfg->decay = kv.get_double("decay", cfg->decay);
  cfg->clip_c = kv.get_double("clip_c", cfg->clip_c);
  cfg->kl_weight = kv.get_double("kl_weight", cfg->kl_weight);
  cfg->init_alpha = kv.get_double("init_alpha", cfg->init_alpha);
  if (kv.has("mode")) cfg->mode = parse_mode(kv.get_string("mode", ""));
  if (kv.has("method")) {
    cfg->method = parse_method(kv.get_string("method", ""));
  }
  cfg->epsilon_total = kv.get_double("epsilon", cfg->epsilon_total);
  cfg->delta_total = kv.get_double("delta", cfg->delta_total);
  if (kv.has("sigma")) cfg->sigma_override = kv.get_double("sigma", 0.0);
  cfg->learn_zeta_private =
      kv.get_bool("learn_zeta", cfg->learn_zeta_private);
  cfg->eval_every = kv.get_size("eval_every", cfg->eval_every);
  cfg->seed = kv.get_u64("seed", cfg->seed);
}

enum class SweepParam { kNone, kHiddenUnits, kEpochs, kClipC, kMinibatch };

inline const char* sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::kNone:
      return "none";
    case SweepParam::kHiddenUnits:
      return "hidden_units";
    case SweepParam::kEpochs:
      return "epochs";
    case SweepParam::kClipC:
      return "clip_c";
    case SweepParam::kMinibatch:
      return "minibatch";
  }
  return "unknown";
}

inline SweepParam parse_sweep_param(const std::string& name) {
  if (name == "none") return SweepParam::kNone;
  if (name == "hidden_units") return SweepParam::kHiddenUnits;
  if (name == "epochs") return SweepParam::kEpochs;
  if (name == "clip_c") return SweepParam::kClipC;
  if (name == "minibatch") return SweepParam::kMinibatch;
  throw ConfigError("unknown sweep parameter '" + name + "'");
}

// One training arm of an experiment: a mode plus its accounting method.
struct ModeSpec {
  TrainMode mode = TrainMode::kNonprivate;
  AccountingMethod method = AccountingMethod::kZcdp;
  bool is_private = false;
  std::string label;  // token as written in the spec file
};

inline ModeSpec parse_mode_spec(const std::string& token) {
  ModeSpec spec;
  spec.label = token;
  if (token == "nonprivate") {
    spec.mode = TrainMode::kNonprivate;
    return spec;
  }
  const std::size_t us = token.rfind('_');
  if (us != std::string::npos) {
    const std::string head = token.substr(0, us);
    const std::string tail = token.substr(us + 1);
    if ((head == "dpvd" || head == "svi") &&
        (tail == "zcdp" || tail == "ac")) {
      spec.mode =
          head == "dpvd" ? TrainMode::kDpvd : TrainMode::kSviNoDropout;
      spec.method = parse_method(tail);
      spec.is_private = true;
      return spec;
    }
  }
  throw ConfigError("unknown experiment mode '" + token +
                    "' (expected dpvd_zcdp, dpvd_ac, svi_zcdp, svi_ac, or "
                    "nonprivate)");
}

// Grid description for the experiment runner: modes x epsilons x sweep
// values, each repeated `repeats` times with per-run seeds.
struct ExperimentSpec {
  DataConfig data;
  TrainConfig base;
  std::vector<ModeSpec> modes = {parse_mode_spec("nonprivate")};
  std::vector<double> epsilons = {1.0};
  SweepParam sweep = SweepParam::kNone;
  std::vector<double> sweep_values;
  std::size_t repeats = 10;
  std::uint64_t seed_base = 1;
};

inline ExperimentSpec experiment_spec_from_kv(KvMap kv) {
  KvReader reader(std::move(kv));
  ExperimentSpec spec;
  apply_data_keys(reader, &spec.data);
  apply_train_keys(reader, &spec.base);

  spec.modes.clear();
  for (const std::string& token :
       reader.get_string_list("modes", {"nonprivate"})) {
    spec.modes.push_back(parse_mode_spec(token));
  }
  spec.epsilons = reader.get_double_list("epsilons", spec.epsilons);
  spec.sweep = parse_sweep_param(reader.get_string("sweep", "none"));
  spec.sweep_values = reader.get_double_list("sweep_values", {});
  spec.repeats = reader.get_size("repeats", spec.repeats);
  spec.seed_base = reader.get_u64("seed_base", spec.seed_base);
  reader.finish();

  if (spec.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (spec.modes.empty()) throw ConfigError("modes must be nonempty");
  if (spec.epsilons.empty()) throw ConfigError("epsilons must be nonempty");
  for (double e : spec.epsilons) {
    if (!(e > 0.0)) throw ConfigError("epsilons must be > 0");
  }
  if (spec.sweep != SweepParam::kNone && spec.sweep_values.empty()) {
    throw ConfigError("sweep_values must be nonempty when sweep is set");
  }
  if (spec.sweep == SweepParam::kNone && !spec.sweep_values.empty()) {
    throw ConfigError("sweep_values given but sweep = none");
  }
  return spec;
}

}  // namespace dpvd

#endif  // DPVD_CONFIG_H_
