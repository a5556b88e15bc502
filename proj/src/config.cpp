#include "boxlift/config.hpp"

#include <algorithm>
#include <fstream>

namespace boxlift {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &consumed);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  if (consumed != value.size()) {
    throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
  }
  return v;
}

}  // namespace

ConfigMap ConfigMap::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  ConfigMap cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

void ConfigMap::apply_override(const std::string& key_equals_value) {
  const auto eq = key_equals_value.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + key_equals_value + "': expected key=value");
  }
  const std::string key = trim(key_equals_value.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + key_equals_value + "': empty key");
  values_[key] = trim(key_equals_value.substr(eq + 1));
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_double(key, it->second);
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  const double v = get_double(key, static_cast<double>(fallback));
  return static_cast<int>(v);
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as an integer");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as a boolean");
}

SceneMode mode_from_config(const ConfigMap& cfg) {
  const std::string mode = cfg.get_string("mode", "outdoor");
  if (mode == "outdoor") return SceneMode::outdoor;
  if (mode == "indoor") return SceneMode::indoor;
  throw ConfigError("mode must be 'outdoor' or 'indoor', got '" + mode + "'");
}

PrepConfig make_prep_config(const ConfigMap& cfg) {
  PrepConfig prep = PrepConfig::defaults_for(mode_from_config(cfg));
  prep.fps_target = cfg.get_u64("prep.fps_target", prep.fps_target);
  prep.ransac_threshold = cfg.get_double("prep.ransac_threshold", prep.ransac_threshold);
  prep.ransac_iterations = cfg.get_int("prep.ransac_iterations", prep.ransac_iterations);
  prep.ransac_max_tilt_deg = cfg.get_double("prep.ransac_max_tilt_deg", prep.ransac_max_tilt_deg);
  prep.cluster_radius = cfg.get_double("prep.cluster_radius", prep.cluster_radius);
  prep.min_cluster = cfg.get_u64("prep.min_cluster", prep.min_cluster);
  prep.seed = cfg.get_u64("prep.seed", prep.seed);
  if (prep.ransac_threshold <= 0 || prep.cluster_radius <= 0 || prep.ransac_iterations < 1) {
    throw ConfigError("prep.* values out of range");
  }
  return prep;
}

FitConfig make_fit_config(const ConfigMap& cfg) {
  FitConfig fit = FitConfig::defaults_for(mode_from_config(cfg));
  fit.weights.lambda_bpl = cfg.get_double("fit.lambda_bpl", fit.weights.lambda_bpl);
  fit.weights.lambda_srl = cfg.get_double("fit.lambda_srl", fit.weights.lambda_srl);
  fit.weights.lambda_pal = cfg.get_double("fit.lambda_pal", fit.weights.lambda_pal);
  fit.learning_rate = cfg.get_double("fit.learning_rate", fit.learning_rate);
  fit.max_iterations = cfg.get_int("fit.max_iterations", fit.max_iterations);
  fit.yaw_starts = cfg.get_int("fit.yaw_starts", fit.yaw_starts);
  fit.border_margin = cfg.get_double("fit.border_margin", fit.border_margin);
  fit.convergence_epsilon = cfg.get_double("fit.convergence_epsilon", fit.convergence_epsilon);
  fit.seed = cfg.get_u64("fit.seed", fit.seed);
  fit.workers = cfg.get_int("fit.workers", fit.workers);

  const std::string pal = cfg.get_string("fit.pal_form", "canonical");
  if (pal == "canonical") {
    fit.pal_form = PalForm::canonical;
  } else if (pal == "literal") {
    fit.pal_form = PalForm::literal;
  } else {
    throw ConfigError("fit.pal_form must be 'canonical' or 'literal', got '" + pal + "'");
  }

  const std::string grad = cfg.get_string("fit.gradient_mode", "analytic");
  if (grad == "analytic") {
    fit.gradient_mode = GradientMode::analytic;
  } else if (grad == "numeric") {
    fit.gradient_mode = GradientMode::numeric;
  } else {
    throw ConfigError("fit.gradient_mode must be 'numeric' or 'analytic', got '" + grad + "'");
  }

  static const std::string kPrefix = "ratio_prior.";
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind(kPrefix, 0) == 0) {
      const std::string cls = key.substr(kPrefix.size());
      if (cls.empty()) throw ConfigError("ratio_prior.* key with empty class name");
      const double r = cfg.get_double(key, 1.0);
      if (r < 1.0) {
        throw ConfigError("ratio prior for '" + cls + "' must be >= 1, got " + value);
      }
      fit.ratio_priors[cls] = r;
    }
  }

  if (!fit.valid()) throw ConfigError("fit.* values out of range");
  return fit;
}

}  // namespace boxlift
