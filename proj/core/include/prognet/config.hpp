#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prognet {

/// Flat key=value configuration with dotted keys ("train.epochs = 50").
/// Lookup precedence: CLI override > environment (PROGNET_TRAIN_EPOCHS)
/// > file value > caller default.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  /// Parse a "key=value" override (CLI --set).
  void set_override(const std::string& assignment);
  void apply_env_overrides(const char* prefix = "PROGNET_");

  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double def) const;
  std::int64_t get_int(const std::string& key, std::int64_t def) const;
  bool get_bool(const std::string& key, bool def) const;
  /// Comma-separated list of reals ("0.9,0.95,0.99").
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& def) const;

  /// Canonical text form (sorted keys) used for hashing and manifests.
  std::string canonical() const;
  /// FNV-1a 64-bit hash of the canonical form, hex-encoded.
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace prognet
