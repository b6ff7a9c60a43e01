#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace richctl {

// Flat key=value configuration; later layers override earlier ones.
using ConfigMap = std::map<std::string, std::string>;

// '#' comments, blank lines ignored, "key = value" per line.
ConfigMap parse_config_file(const std::filesystem::path& path);

// "key=value" strings (CLI overrides); malformed entries throw.
void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& kvs);
void merge_into(ConfigMap& base, const ConfigMap& layer);

// Named presets; "paper-default" carries the reference hyperparameters,
// "plain" disables every control module.
ConfigMap preset(const std::string& name);

std::string get_str(const ConfigMap& c, const std::string& key, const std::string& def);
double get_double(const ConfigMap& c, const std::string& key, double def);
int get_int(const ConfigMap& c, const std::string& key, int def);
bool get_bool(const ConfigMap& c, const std::string& key, bool def);

}  // namespace richctl
