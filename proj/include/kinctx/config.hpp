#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kinctx/eval_harness.hpp"
#include "kinctx/lm_scorer.hpp"

namespace kinctx {

/// Flat `key = value` document. `#` starts a comment, surrounding quotes
/// are stripped, later keys replace earlier ones.
class Settings {
 public:
  static Settings parse(std::istream& in, std::string_view source);
  static Settings load_file(const std::filesystem::path& path);

  /// Throws on a key outside the known set.
  void set(const std::string& key, std::string value);
  /// Copies every value of `overrides` over this one.
  void merge(const Settings& overrides);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;
  /// Throws naming the key when it is absent.
  const std::string& require(std::string_view key) const;

  std::optional<double> number(std::string_view key) const;
  std::optional<std::size_t> count(std::string_view key) const;
  std::optional<std::uint64_t> unsigned_number(std::string_view key) const;
  std::optional<bool> flag(std::string_view key) const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

/// Every key the experiment file may carry.
const std::vector<std::string>& known_setting_keys();

/// Builds the experiment description; unspecified keys keep their defaults.
ExperimentConfig experiment_from_settings(const Settings& s);

/// "A:1,B:4" -> {A: 1, B: 4}.
std::map<std::string, double> parse_bias_list(std::string_view text);

/// `scorer = mock` (mock_bias, mock_boost, mock_default_bias) or
/// `scorer = remote` (remote_url, remote_timeout ms, remote_max_inflight).
std::unique_ptr<Scorer> scorer_from_settings(const Settings& s);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace kinctx
