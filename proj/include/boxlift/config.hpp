#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "boxlift/fitter.hpp"
#include "boxlift/preprocess.hpp"

namespace boxlift {

/// Flat key=value configuration: '#' comments, blank lines ignored, later
/// assignments win. CLI flag overrides reuse the same "key=value" syntax.
class ConfigMap {
 public:
  ConfigMap() = default;

  static ConfigMap from_file(const std::filesystem::path& path);

  void apply_override(const std::string& key_equals_value);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

SceneMode mode_from_config(const ConfigMap& cfg);

/// prep.* keys; unset values take the mode-specific defaults.
PrepConfig make_prep_config(const ConfigMap& cfg);

/// fit.* and ratio_prior.* keys; unset values take the mode-specific defaults.
FitConfig make_fit_config(const ConfigMap& cfg);

}  // namespace boxlift
