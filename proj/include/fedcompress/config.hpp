// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: a flat `key = value` document with dotted section
// names. `[section]` headers prefix the keys that follow them. Every key can
// also be given on the command line as `--key value`; command-line values win.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedcompress/controller.hpp"
#include "fedcompress/data.hpp"
#include "fedcompress/error.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/runtime.hpp"

namespace fedcompress {

struct DataConfig {
  std::string path;  // optional CSV dataset; blobs are generated when empty
  std::size_t classes = 8;
  std::size_t dim = 16;
  std::size_t samples = 4000;
  double spread = 0.1;
  double radius = 1.0;
  double offset = 2.0;
  double test_fraction = 0.2;
  std::size_t ood_samples = 1024;
};

struct ControllerBounds {
  std::size_t c_min = 4;
  std::size_t c_max = 32;
  std::size_t window = 3;
  std::size_t patience = 3;
  double tolerance = 1e-3;

  ControllerState initial_state() const { return ControllerState::start(c_min, c_max, window, patience, tolerance); }
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string mode = "fedcompress";  // a Mode name or "all"
  std::size_t trials = 1;
  std::string out;                   // empty: $FEDCOMPRESS_OUT, then "fedcompress_out"
  DataConfig data;
  PartitionSpec partition;           // the seed field is derived per run
  std::vector<std::size_t> hidden{32};
  TrainConfig train;
  FedConfig fed;
  ControllerBounds controller;

  std::vector<Mode> modes() const {
    if (mode == "all") return {std::begin(kAllModes), std::end(kAllModes)};
    return {*parse_mode(mode)};
  }

  std::vector<std::size_t> layer_dims(std::size_t input_dim, std::size_t classes) const {
    std::vector<std::size_t> d{input_dim};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(classes);
    return d;
  }

  std::string output_dir() const {
    if (!out.empty()) return out;
    if (const char* env = std::getenv("FEDCOMPRESS_OUT"); env && *env) return env;
    return "fedcompress_out";
  }

  void validate() const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return static_cast<T>(v);
}

inline int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

inline double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
KeySpec unsigned_key(std::string name, T ExperimentConfig::*outer) {
  return {name, [outer, name](ExperimentConfig& c, const std::string& v) { c.*outer = parse_unsigned<T>(name, v); },
          [outer](const ExperimentConfig& c) { return std::to_string(c.*outer); }};
}

template <typename Section, typename T>
KeySpec unsigned_key(std::string name, Section ExperimentConfig::*section, T Section::*field) {
  return {name,
          [=](ExperimentConfig& c, const std::string& v) { (c.*section).*field = parse_unsigned<T>(name, v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*section).*field); }};
}

template <typename Section>
KeySpec int_key(std::string name, Section ExperimentConfig::*section, int Section::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { (c.*section).*field = parse_int(name, v); },
          [=](const ExperimentConfig& c) { return std::to_string((c.*section).*field); }};
}

template <typename Section>
KeySpec double_key(std::string name, Section ExperimentConfig::*section, double Section::*field) {
  return {name, [=](ExperimentConfig& c, const std::string& v) { (c.*section).*field = parse_double(name, v); },
          [=](const ExperimentConfig& c) { return format_double((c.*section).*field); }};
}

inline const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = [] {
    std::vector<KeySpec> t;
    using EC = ExperimentConfig;
    t.push_back(unsigned_key("experiment.seed", &EC::seed));
    t.push_back({"experiment.mode", [](EC& c, const std::string& v) { c.mode = v; },
                 [](const EC& c) { return c.mode; }});
    t.push_back(unsigned_key("experiment.trials", &EC::trials));
    t.push_back({"experiment.out", [](EC& c, const std::string& v) { c.out = v; },
                 [](const EC& c) { return c.out; }});

    t.push_back({"data.path", [](EC& c, const std::string& v) { c.data.path = v; },
                 [](const EC& c) { return c.data.path; }});
    t.push_back(unsigned_key("data.classes", &EC::data, &DataConfig::classes));
    t.push_back(unsigned_key("data.dim", &EC::data, &DataConfig::dim));
    t.push_back(unsigned_key("data.samples", &EC::data, &DataConfig::samples));
    t.push_back(double_key("data.spread", &EC::data, &DataConfig::spread));
    t.push_back(double_key("data.radius", &EC::data, &DataConfig::radius));
    t.push_back(double_key("data.offset", &EC::data, &DataConfig::offset));
    t.push_back(double_key("data.test_fraction", &EC::data, &DataConfig::test_fraction));
    t.push_back(unsigned_key("data.ood_samples", &EC::data, &DataConfig::ood_samples));

    t.push_back(double_key("partition.size_cv", &EC::partition, &PartitionSpec::size_cv));
    t.push_back(double_key("partition.alpha", &EC::partition, &PartitionSpec::alpha));
    t.push_back(double_key("partition.unlabeled_fraction", &EC::partition, &PartitionSpec::unlabeled_fraction));

    t.push_back({"model.hidden",
                 [](EC& c, const std::string& v) {
                   c.hidden.clear();
                   std::string item;
                   std::istringstream in(v);
                   while (std::getline(in, item, ',')) {
                     c.hidden.push_back(parse_unsigned<std::size_t>("model.hidden", trim(item)));
                   }
                 },
                 [](const EC& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(c.hidden[i]);
                   return s;
                 }});

    t.push_back(double_key("train.lr_client", &EC::train, &TrainConfig::lr_client));
    t.push_back(double_key("train.lr_server", &EC::train, &TrainConfig::lr_server));
    t.push_back(int_key("train.epochs_client", &EC::train, &TrainConfig::epochs_client));
    t.push_back(int_key("train.epochs_server", &EC::train, &TrainConfig::epochs_server));
    t.push_back(int_key("train.batch_size", &EC::train, &TrainConfig::batch_size));
    t.push_back(double_key("train.beta_client", &EC::train, &TrainConfig::beta_client));
    t.push_back(double_key("train.beta_server", &EC::train, &TrainConfig::beta_server));
    t.push_back(int_key("train.beta_warmup_epochs", &EC::train, &TrainConfig::beta_warmup_epochs));
    t.push_back(double_key("train.temperature", &EC::train, &TrainConfig::temperature));

    t.push_back(unsigned_key("fed.clients", &EC::fed, &FedConfig::clients));
    t.push_back(unsigned_key("fed.participants", &EC::fed, &FedConfig::participants));
    t.push_back(unsigned_key("fed.rounds", &EC::fed, &FedConfig::rounds));
    t.push_back(unsigned_key("fed.fixed_clusters", &EC::fed, &FedConfig::fixed_clusters));
    t.push_back(unsigned_key("fed.threads", &EC::fed, &FedConfig::threads));

    t.push_back(unsigned_key("controller.c_min", &EC::controller, &ControllerBounds::c_min));
    t.push_back(unsigned_key("controller.c_max", &EC::controller, &ControllerBounds::c_max));
    t.push_back(unsigned_key("controller.window", &EC::controller, &ControllerBounds::window));
    t.push_back(unsigned_key("controller.patience", &EC::controller, &ControllerBounds::patience));
    t.push_back(double_key("controller.tolerance", &EC::controller, &ControllerBounds::tolerance));
    return t;
  }();
  return table;
}

inline const KeySpec& find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (k.name == name) return k;
  throw ConfigError("unknown configuration key '" + name + "'");
}

}  // namespace detail

/// Names of all configuration keys, in echo order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const auto& k : detail::key_table()) names.push_back(k.name);
  return names;
}

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  detail::find_key(key).set(cfg, detail::trim(value));
}

inline std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  return detail::find_key(key).get(cfg);
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (mode != "all" && !parse_mode(mode)) {
    fail("experiment.mode: expected one of fedavg, fixed-cluster, fedcompress-no-scs, fedcompress, all; got '" +
         mode + "'");
  }
  if (trials < 1) fail("experiment.trials must be at least 1");
  if (data.path.empty()) {
    if (data.classes < 2) fail("data.classes must be at least 2");
    if (data.dim < 1) fail("data.dim must be at least 1");
    if (data.samples < data.classes) fail("data.samples must be at least data.classes");
    if (!(data.spread >= 0.0)) fail("data.spread must be non-negative");
    if (!(data.radius > 0.0)) fail("data.radius must be positive");
  }
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) fail("data.test_fraction must lie in (0, 1)");
  if (data.ood_samples < 1) fail("data.ood_samples must be at least 1");
  if (!(partition.size_cv >= 0.0)) fail("partition.size_cv must be non-negative");
  if (!(partition.alpha > 0.0)) fail("partition.alpha must be positive");
  if (!(partition.unlabeled_fraction >= 0.0 && partition.unlabeled_fraction < 1.0)) {
    fail("partition.unlabeled_fraction must lie in [0, 1)");
  }
  if (hidden.empty()) fail("model.hidden needs at least one hidden layer width");
  for (auto h : hidden)
    if (h < 1) fail("model.hidden widths must be positive");
  if (controller.c_min > controller.c_max) {
    fail("controller.c_min (" + std::to_string(controller.c_min) + ") exceeds controller.c_max (" +
         std::to_string(controller.c_max) + ")");
  }
  try {
    train.validate();
    fed.validate();
    (void)controller.initial_state();
  } catch (const InvalidInput& e) {
    fail(e.what());
  }
}

/// Applies a key-value document to `cfg`.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto key = detail::trim(std::string_view(body).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    set_config_value(cfg, key, body.substr(eq + 1));
  }
}

/// Defaults, then the optional file, then command-line overrides; validated.
inline ExperimentConfig parse_config(const std::string& path,
                                     const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    apply_config_text(cfg, buf.str(), path);
  }
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

/// Every key with its resolved value, one `key = value` per line.
inline std::string echo_config(const ExperimentConfig& cfg) {
  std::string s;
  for (const auto& k : detail::key_table()) s += k.name + " = " + k.get(cfg) + "\n";
  return s;
}

}  // namespace fedcompress
