#include "prognet/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "prognet/errors.hpp"

extern char** environ;

namespace prognet {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) +
                            " has no '=': " + t);
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(lineno) +
                            " has empty key");
    }
    c.kv_[key] = value;
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

void Config::set_override(const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override must be key=value: " + assignment);
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::apply_env_overrides(const char* prefix) {
  // PROGNET_TRAIN_EPOCHS=10 maps onto key "train.epochs".
  const std::string pre(prefix);
  for (char** e = environ; e && *e; ++e) {
    std::string entry(*e);
    if (entry.rfind(pre, 0) != 0) continue;
    std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string raw = entry.substr(pre.size(), eq - pre.size());
    std::string value = entry.substr(eq + 1);
    std::string key;
    key.reserve(raw.size());
    for (char ch : raw) {
      key += (ch == '_') ? '.' : static_cast<char>(std::tolower(ch));
    }
    kv_[key] = value;
  }
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_str(const std::string& key,
                            const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

std::string Config::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ValidationError("missing config key: " + key);
  return it->second;
}

double Config::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key +
                          " is not a real number: " + it->second);
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    std::size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key +
                          " is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config key " + key + " is not a boolean: " + v);
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string t = trim(item);
    if (t.empty()) continue;
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw ValidationError("config key " + key + " has non-numeric item: " + t);
    }
  }
  return out;
}

std::string Config::canonical() const {
  std::ostringstream out;
  for (const auto& [k, v] : kv_) out << k << "=" << v << "\n";
  return out.str();
}

std::string Config::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace prognet
