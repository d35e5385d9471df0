#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace apex {

// Flat `name = value` text files. Blank lines and `#` comments are ignored.
// Insertion order is preserved so written files diff cleanly.
class KeyValueFile {
 public:
  static KeyValueFile load(const std::filesystem::path& path);
  static KeyValueFile parse(std::istream& in, std::string_view source_name = "<stream>");

  void save(const std::filesystem::path& path) const;
  void write(std::ostream& out) const;

  bool contains(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;

  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::string get_string(std::string_view key, std::string fallback) const;

  // Strict variant for required keys.
  double require_double(std::string_view key) const;

  void set(std::string_view key, std::string value);
  void set(std::string_view key, double value);
  void set(std::string_view key, std::int64_t value);
  void set(std::string_view key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(std::string_view key, bool value);

  // Copies every entry of `other` over this file's values.
  void merge(const KeyValueFile& other);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string source_ = "<memory>";
};

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);
double parse_double(std::string_view text, std::string_view what, std::size_t line = 0);
std::string_view trim(std::string_view text);

}  // namespace apex
