#include "esd/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace esd {

std::string to_string(ExperimentId id) {
  switch (id) {
    case ExperimentId::kBimodal: return "bimodal";
    case ExperimentId::kGmm20d: return "gmm20d";
    case ExperimentId::kElliptic: return "elliptic";
    case ExperimentId::kCustom: return "custom";
  }
  return "bimodal";
}

ExperimentId experiment_from_string(const std::string& name) {
  if (name == "bimodal") return ExperimentId::kBimodal;
  if (name == "gmm20d") return ExperimentId::kGmm20d;
  if (name == "elliptic") return ExperimentId::kElliptic;
  if (name == "custom") return ExperimentId::kCustom;
  throw std::invalid_argument("unknown experiment id '" + name + "'");
}

namespace {

std::string trim(std::string s) {
  const auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_same_v<T, double>)
      os << format_double(v[i]);
    else
      os << v[i];
  }
  return os.str();
}

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void flatten_json(const nlohmann::json& j, const std::string& prefix, KeyValues& kv) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items())
      flatten_json(value, prefix.empty() ? key : prefix + "." + key, kv);
  } else if (j.is_array()) {
    std::string joined;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) joined += ',';
      joined += j[i].is_number_float() ? format_double(j[i].get<double>()) : j[i].dump();
    }
    kv[prefix] = joined;
  } else if (j.is_string()) {
    kv[prefix] = j.get<std::string>();
  } else if (j.is_boolean()) {
    kv[prefix] = j.get<bool>() ? "true" : "false";
  } else if (j.is_number_float()) {
    kv[prefix] = format_double(j.get<double>());
  } else {
    kv[prefix] = j.dump();
  }
}

class Problems {
 public:
  void add(const std::string& field, const std::string& what) {
    items_.push_back(field + ": " + what);
  }
  void add_raw(const std::string& item) { items_.push_back(item); }
  void check(const std::string& origin) const {
    if (items_.empty()) return;
    std::string msg = origin + ": invalid config:";
    for (const auto& p : items_) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }
  bool empty() const { return items_.empty(); }

 private:
  std::vector<std::string> items_;
};

bool parse_double_strict(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

bool parse_int_strict(const std::string& s, long long& out) {
  try {
    std::size_t used = 0;
    out = std::stoll(s, &used);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

}  // namespace

ExperimentConfig default_config(ExperimentId id) {
  ExperimentConfig cfg;
  cfg.experiment = id;
  switch (id) {
    case ExperimentId::kBimodal:
      // Ablation base case: K=5000, sigma_u2=sigma_v2=0.005, sigma_y2=1e-4,
      // dtau=1e-3, y=1, z-scored inputs.
      cfg.data_k = 5000;
      cfg.sigma_u2 = cfg.sigma_v2 = 0.005;
      cfg.sigma_y2 = 1e-4;
      cfg.normalize = true;
      cfg.n_steps = 1000;
      cfg.label_count = 2000;
      cfg.train_epochs = 5000;
      cfg.train_hidden = {50, 50};
      cfg.eval_samples = 10000;
      cfg.eval_nn_samples = 10000;
      cfg.kde_bandwidth = 0.05;
      break;
    case ExperimentId::kGmm20d:
      cfg.data_k = 150000;
      cfg.sigma_u2 = cfg.sigma_v2 = 0.10;
      cfg.sigma_y2 = 1e-5;
      cfg.normalize = false;
      cfg.n_steps = 1000;
      cfg.label_count = 30000;
      cfg.train_epochs = 50000;
      cfg.train_hidden = {50, 50};
      cfg.eval_samples = 2000;
      cfg.eval_nn_samples = 50000;
      cfg.kde_bandwidth = 0.0;
      break;
    case ExperimentId::kElliptic:
      cfg.data_k = 5000;
      cfg.sigma_u2 = cfg.sigma_v2 = 0.10;
      cfg.sigma_y2 = 1e-5;
      // The published variances are only meaningful relative to z-scored
      // marginals: raw solution observations live at the 1e-2 scale, where a
      // 0.1-variance kernel would wash out the conditioning entirely.
      cfg.normalize = true;
      cfg.n_steps = 1000;
      cfg.label_count = 5000;
      cfg.train_epochs = 20000;
      cfg.train_hidden = {100};
      cfg.eval_samples = 2000;
      cfg.eval_nn_samples = 5000;
      cfg.kde_bandwidth = 0.0;
      break;
    case ExperimentId::kCustom:
      cfg.normalize = false;
      cfg.kde_bandwidth = 0.0;
      break;
  }
  return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.epochs = train_epochs;
  t.batch_size = train_batch_size;
  t.lr = train_lr;
  t.hidden = train_hidden;
  t.seed = seed;
  return t;
}

void ExperimentConfig::validate() const {
  const std::vector<std::string> issues = problems();
  if (issues.empty()) return;
  std::string msg = "config: invalid config:";
  for (const auto& p : issues) msg += "\n  - " + p;
  throw std::invalid_argument(msg);
}

std::vector<std::string> ExperimentConfig::problems() const {
  struct Collector {
    std::vector<std::string> items;
    void add(const std::string& field, const std::string& what) {
      items.push_back(field + ": " + what);
    }
  } problems;
  if (!(sigma_u2 > 0.0) && !sigma_u2_auto) problems.add("prior.sigma_u2", "must be positive");
  if (!(sigma_v2 > 0.0) && !sigma_v2_auto) problems.add("prior.sigma_v2", "must be positive");
  if (!(sigma_y2 > 0.0)) problems.add("prior.sigma_y2", "must be positive");
  if (n_steps < 2) problems.add("ode.n_steps", "must be >= 2");
  if (ode_batch < 1) problems.add("ode.batch", "must be >= 1");
  if (data_path.empty() && data_k < 1) problems.add("data.k", "must be >= 1");
  if (!data_path.empty() && !std::filesystem::exists(data_path))
    problems.add("data.path", "file does not exist: " + data_path);
  if (label_count < 0) problems.add("label.count", "must be >= 0");
  if (train_epochs < 1) problems.add("train.epochs", "must be >= 1");
  if (train_batch_size < 0) problems.add("train.batch_size", "must be >= 0");
  if (!(train_lr > 0.0)) problems.add("train.lr", "must be positive");
  for (const auto h : train_hidden)
    if (h < 1) problems.add("train.hidden", "sizes must be >= 1");
  if (eval_samples < 2) problems.add("eval.samples", "must be >= 2");
  if (eval_nn_samples < 2) problems.add("eval.nn_samples", "must be >= 2");
  if (grid_points < 2) problems.add("eval.grid_points", "must be >= 2");
  if (!(bimodal_sigma_true2 > 0.0)) problems.add("bimodal.sigma_true2", "must be positive");
  if (gmm_d_u < 1 || gmm_d_v < 1) problems.add("gmm20d.d_u/d_v", "must be >= 1");
  if (pde_grid_n < 4) problems.add("elliptic.grid_n", "must be >= 4");
  if (pde_n_obs < 1) problems.add("elliptic.n_obs", "must be >= 1");
  if (pde_rel_noise_var < 0.0) problems.add("elliptic.rel_noise_var", "must be >= 0");
  if (pde_m < 1 || pde_l < 1) problems.add("elliptic.m/l", "must be >= 1");
  if (pde_eval_samples < 2) problems.add("elliptic.eval_samples", "must be >= 2");
  if (convergence_steps.empty()) problems.add("convergence.steps", "must be non-empty");
  for (const int s : convergence_steps)
    if (s < 2) problems.add("convergence.steps", "entries must be >= 2");
  if (experiment == ExperimentId::kCustom) {
    if (data_path.empty()) problems.add("data.path", "required for custom experiments");
    if (custom_y.empty()) problems.add("custom.y", "required for custom experiments");
  }
  return problems.items;
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "experiment = " << to_string(experiment) << '\n';
  os << "seed = " << seed << '\n';
  os << "threads = " << threads << '\n';
  os << "out = " << out.string() << '\n';
  os << "data.path = " << data_path << '\n';
  os << "data.k = " << data_k << '\n';
  os << "bimodal.sigma_true2 = " << format_double(bimodal_sigma_true2) << '\n';
  os << "bimodal.y = " << format_double(bimodal_y) << '\n';
  os << "gmm20d.d_u = " << gmm_d_u << '\n';
  os << "gmm20d.d_v = " << gmm_d_v << '\n';
  os << "gmm20d.y_scales = " << join(gmm_y_scales) << '\n';
  os << "elliptic.grid_n = " << pde_grid_n << '\n';
  os << "elliptic.n_obs = " << pde_n_obs << '\n';
  os << "elliptic.rel_noise_var = " << format_double(pde_rel_noise_var) << '\n';
  os << "elliptic.m = " << pde_m << '\n';
  os << "elliptic.l = " << pde_l << '\n';
  os << "elliptic.eval_samples = " << pde_eval_samples << '\n';
  os << "elliptic.sigma_y2_high = " << format_double(pde_sigma_y2_high) << '\n';
  os << "custom.y = " << join(custom_y) << '\n';
  os << "prior.sigma_u2 = " << (sigma_u2_auto ? std::string("auto") : format_double(sigma_u2))
     << '\n';
  os << "prior.sigma_v2 = " << (sigma_v2_auto ? std::string("auto") : format_double(sigma_v2))
     << '\n';
  os << "prior.sigma_y2 = " << format_double(sigma_y2) << '\n';
  os << "prior.normalize = " << (normalize ? "true" : "false") << '\n';
  os << "ode.n_steps = " << n_steps << '\n';
  os << "ode.batch = " << ode_batch << '\n';
  os << "label.count = " << label_count << '\n';
  os << "train.epochs = " << train_epochs << '\n';
  os << "train.batch_size = " << train_batch_size << '\n';
  os << "train.lr = " << format_double(train_lr) << '\n';
  os << "train.hidden = " << join(train_hidden) << '\n';
  os << "eval.samples = " << eval_samples << '\n';
  os << "eval.nn_samples = " << eval_nn_samples << '\n';
  os << "eval.grid_points = " << grid_points << '\n';
  os << "eval.kde_bandwidth = " << format_double(kde_bandwidth) << '\n';
  os << "score.truncate = " << (truncate ? "true" : "false") << '\n';
  os << "convergence.steps = " << join(convergence_steps) << '\n';
  return os.str();
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  const std::string trimmed = trim(text);
  if (!trimmed.empty() && trimmed.front() == '{') {
    flatten_json(nlohmann::json::parse(trimmed), "", kv);
  } else {
    kv = parse_key_values(text, origin);
  }

  ExperimentId id = ExperimentId::kBimodal;
  Problems problems;
  if (const auto it = kv.find("experiment"); it != kv.end()) {
    try {
      id = experiment_from_string(it->second);
    } catch (const std::exception& e) {
      problems.add("experiment", e.what());
    }
    kv.erase(it);
  }
  ExperimentConfig cfg = default_config(id);

  const auto set_double = [&](const std::string& key, double& target) {
    return [&target, key, &problems](const std::string& value) {
      double v;
      if (parse_double_strict(value, v))
        target = v;
      else
        problems.add(key, "expected a number, got '" + value + "'");
    };
  };
  const auto set_int = [&](const std::string& key, auto& target, long long lo) {
    return [&target, key, lo, &problems](const std::string& value) {
      long long v;
      if (parse_int_strict(value, v) && v >= lo)
        target = static_cast<std::decay_t<decltype(target)>>(v);
      else
        problems.add(key, "expected an integer >= " + std::to_string(lo));
    };
  };
  const auto set_bool = [&](const std::string& key, bool& target) {
    return [&target, key, &problems](const std::string& value) {
      if (value == "true" || value == "1")
        target = true;
      else if (value == "false" || value == "0")
        target = false;
      else
        problems.add(key, "expected true/false");
    };
  };
  const auto set_double_list = [&](const std::string& key, std::vector<double>& target) {
    return [&target, key, &problems](const std::string& value) {
      std::vector<double> parsed;
      std::istringstream in(value);
      std::string field;
      bool ok = true;
      while (std::getline(in, field, ',')) {
        double v;
        if (parse_double_strict(trim(field), v))
          parsed.push_back(v);
        else
          ok = false;
      }
      if (ok && (!parsed.empty() || value.empty()))
        target = std::move(parsed);
      else
        problems.add(key, "expected a comma-separated list of numbers");
    };
  };
  const auto set_index_list = [&](const std::string& key, auto& target) {
    return [&target, key, &problems](const std::string& value) {
      std::decay_t<decltype(target)> parsed;
      std::istringstream in(value);
      std::string field;
      bool ok = true;
      while (std::getline(in, field, ',')) {
        long long v;
        if (parse_int_strict(trim(field), v))
          parsed.push_back(static_cast<typename std::decay_t<decltype(target)>::value_type>(v));
        else
          ok = false;
      }
      if (ok && !parsed.empty())
        target = std::move(parsed);
      else
        problems.add(key, "expected a comma-separated list of integers");
    };
  };
  const auto set_sigma_or_auto = [&](const std::string& key, double& target, bool& auto_flag) {
    return [&target, &auto_flag, key, &problems](const std::string& value) {
      if (value == "auto") {
        auto_flag = true;
        return;
      }
      double v;
      if (parse_double_strict(value, v)) {
        target = v;
        auto_flag = false;
      } else {
        problems.add(key, "expected a number or 'auto'");
      }
    };
  };

  std::map<std::string, std::function<void(const std::string&)>> setters;
  setters["seed"] = set_int("seed", cfg.seed, 0);
  setters["threads"] = set_int("threads", cfg.threads, 0);
  setters["out"] = [&](const std::string& v) { cfg.out = v; };
  setters["data.path"] = [&](const std::string& v) { cfg.data_path = v; };
  setters["data.k"] = set_int("data.k", cfg.data_k, 1);
  setters["bimodal.sigma_true2"] = set_double("bimodal.sigma_true2", cfg.bimodal_sigma_true2);
  setters["bimodal.y"] = set_double("bimodal.y", cfg.bimodal_y);
  setters["gmm20d.d_u"] = set_int("gmm20d.d_u", cfg.gmm_d_u, 1);
  setters["gmm20d.d_v"] = set_int("gmm20d.d_v", cfg.gmm_d_v, 1);
  setters["gmm20d.y_scales"] = set_double_list("gmm20d.y_scales", cfg.gmm_y_scales);
  setters["elliptic.grid_n"] = set_int("elliptic.grid_n", cfg.pde_grid_n, 4);
  setters["elliptic.n_obs"] = set_int("elliptic.n_obs", cfg.pde_n_obs, 1);
  setters["elliptic.rel_noise_var"] =
      set_double("elliptic.rel_noise_var", cfg.pde_rel_noise_var);
  setters["elliptic.m"] = set_int("elliptic.m", cfg.pde_m, 1);
  setters["elliptic.l"] = set_int("elliptic.l", cfg.pde_l, 1);
  setters["elliptic.eval_samples"] = set_int("elliptic.eval_samples", cfg.pde_eval_samples, 2);
  setters["elliptic.sigma_y2_high"] =
      set_double("elliptic.sigma_y2_high", cfg.pde_sigma_y2_high);
  setters["custom.y"] = set_double_list("custom.y", cfg.custom_y);
  setters["prior.sigma_u2"] = set_sigma_or_auto("prior.sigma_u2", cfg.sigma_u2, cfg.sigma_u2_auto);
  setters["prior.sigma_v2"] = set_sigma_or_auto("prior.sigma_v2", cfg.sigma_v2, cfg.sigma_v2_auto);
  setters["prior.sigma_y2"] = set_double("prior.sigma_y2", cfg.sigma_y2);
  setters["prior.normalize"] = set_bool("prior.normalize", cfg.normalize);
  setters["ode.n_steps"] = set_int("ode.n_steps", cfg.n_steps, 2);
  setters["ode.batch"] = set_int("ode.batch", cfg.ode_batch, 1);
  setters["label.count"] = set_int("label.count", cfg.label_count, 0);
  setters["train.epochs"] = set_int("train.epochs", cfg.train_epochs, 1);
  setters["train.batch_size"] = set_int("train.batch_size", cfg.train_batch_size, 0);
  setters["train.lr"] = set_double("train.lr", cfg.train_lr);
  setters["train.hidden"] = set_index_list("train.hidden", cfg.train_hidden);
  setters["eval.samples"] = set_int("eval.samples", cfg.eval_samples, 2);
  setters["eval.nn_samples"] = set_int("eval.nn_samples", cfg.eval_nn_samples, 2);
  setters["eval.grid_points"] = set_int("eval.grid_points", cfg.grid_points, 2);
  setters["eval.kde_bandwidth"] = set_double("eval.kde_bandwidth", cfg.kde_bandwidth);
  setters["score.truncate"] = set_bool("score.truncate", cfg.truncate);
  setters["convergence.steps"] = set_index_list("convergence.steps", cfg.convergence_steps);

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end())
      problems.add(key, "unknown key");
    else
      it->second(value);
  }
  for (const auto& issue : cfg.problems()) problems.add_raw(issue);
  problems.check(origin);
  return cfg;
}

ExperimentConfig validate_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

}  // namespace esd
