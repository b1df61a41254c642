#pragma once

#include <map>
#include <string>
#include <vector>

#include "hjbac/trainer/config.hpp"

namespace hjbac::cli {

/// Bad flag, config key or value. Maps to the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One `key = value` line from a config file.
struct Setting {
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "--flag"
};

/// Parses a flat config file. Blank lines and lines starting with '#' or ';'
/// are skipped, `[section]` headers only group keys, and a key may appear once.
/// Throws UsageError with the offending line on malformed input.
std::vector<Setting> parse_config_text(const std::string& text, const std::string& name);
std::vector<Setting> parse_config_file(const std::string& path);

/// Every key accepted in config files and (with a leading --) on the command line.
const std::vector<std::string>& setting_keys();

/// Applies one setting. Throws UsageError for unknown keys or bad values.
void apply_setting(train::TrainConfig& cfg, const Setting& s);

/// Builds a training configuration: dimension dependent defaults for the
/// chosen problem and dimension, then the file settings, then the flags.
train::TrainConfig resolve_config(const std::vector<Setting>& file_settings,
                                  const std::vector<Setting>& flag_settings);

}  // namespace hjbac::cli
