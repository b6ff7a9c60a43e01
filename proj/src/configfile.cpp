#include "richctl/configfile.hpp"

#include <fstream>
#include <stdexcept>

namespace richctl {

namespace {
std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

ConfigMap parse_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path.string());
    ConfigMap out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& kvs) {
    for (const auto& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("override must be key=value: " + kv);
        cfg[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
    }
}

void merge_into(ConfigMap& base, const ConfigMap& layer) {
    for (const auto& [k, v] : layer) base[k] = v;
}

ConfigMap preset(const std::string& name) {
    ConfigMap c;
    if (name == "paper-default") {
        c["steps"] = "50";
        c["eta"] = "1.0";
        c["injection.enabled"] = "true";
        c["injection.tau"] = "0.6";
        c["injection.schedule"] = "constant";
        c["injection.C"] = "0.4";
        c["injection.layers"] = "d0,d1,d2";
        c["appearance.enabled"] = "true";
        c["appearance.layers"] = "d1,d2";
        c["appearance.window_lo"] = "0.0";
        c["appearance.window_hi"] = "1.0";
        c["restart.enabled"] = "true";
        c["restart.sigma_tmin"] = "1.0";
        c["restart.sigma_tmax"] = "2.0";
        c["restart.N"] = "3";
        c["restart.S_steps"] = "5";
        c["restart.N_prime"] = "2";
        c["restart.tprime_min"] = "0.1";
        c["restart.tprime_max"] = "0.5";
        c["arp.enabled"] = "true";
        c["prep.enabled"] = "true";
    } else if (name == "plain") {
        c["steps"] = "50";
        c["eta"] = "1.0";
        c["injection.enabled"] = "false";
        c["appearance.enabled"] = "false";
        c["restart.enabled"] = "false";
        c["arp.enabled"] = "false";
        c["prep.enabled"] = "false";
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

std::string get_str(const ConfigMap& c, const std::string& key, const std::string& def) {
    auto it = c.find(key);
    return it == c.end() ? def : it->second;
}

double get_double(const ConfigMap& c, const std::string& key, double def) {
    auto it = c.find(key);
    return it == c.end() ? def : std::stod(it->second);
}

int get_int(const ConfigMap& c, const std::string& key, int def) {
    auto it = c.find(key);
    return it == c.end() ? def : std::stoi(it->second);
}

bool get_bool(const ConfigMap& c, const std::string& key, bool def) {
    auto it = c.find(key);
    if (it == c.end()) return def;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw std::invalid_argument("bad boolean for " + key + ": " + it->second);
}

}  // namespace richctl
