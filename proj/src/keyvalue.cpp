#include "apex/keyvalue.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "apex/errors.hpp"

namespace apex {

std::string_view trim(std::string_view text) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  return text;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("cannot format double");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text, std::string_view what, std::size_t line) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("invalid number '" + std::string(text) + "' for " + std::string(what), line);
  }
  return value;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse(in, path.string());
}

KeyValueFile KeyValueFile::parse(std::istream& in, std::string_view source_name) {
  KeyValueFile kv;
  kv.source_ = std::string(source_name);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(kv.source_ + ": expected 'name = value'", line_no);
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(kv.source_ + ": empty key", line_no);
    kv.set(key, std::string(value));
  }
  return kv;
}

void KeyValueFile::write(std::ostream& out) const {
  for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write(out);
  if (!out) throw IoError("write failed for " + path.string());
}

bool KeyValueFile::contains(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueFile::get(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

double KeyValueFile::get_double(std::string_view key, double fallback) const {
  auto v = get(key);
  return v ? parse_double(*v, source_ + ":" + std::string(key)) : fallback;
}

double KeyValueFile::require_double(std::string_view key) const {
  auto v = get(key);
  if (!v) throw ConfigError(source_ + ": missing required key '" + std::string(key) + "'");
  return parse_double(*v, source_ + ":" + std::string(key));
}

std::int64_t KeyValueFile::get_int(std::string_view key, std::int64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  // Accept scientific notation (e.g. 120e6) as long as it is integral.
  double d = parse_double(*v, source_ + ":" + std::string(key));
  auto i = static_cast<std::int64_t>(d);
  if (static_cast<double>(i) != d) {
    throw ConfigError(source_ + ": key '" + std::string(key) + "' must be an integer");
  }
  return i;
}

bool KeyValueFile::get_bool(std::string_view key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(source_ + ": key '" + std::string(key) + "' is not a boolean: " + *v);
}

std::string KeyValueFile::get_string(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : fallback;
}

void KeyValueFile::set(std::string_view key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::string(key), std::move(value));
}

void KeyValueFile::set(std::string_view key, double value) { set(key, format_double(value)); }
void KeyValueFile::set(std::string_view key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValueFile::set(std::string_view key, bool value) {
  set(key, std::string(value ? "true" : "false"));
}

void KeyValueFile::merge(const KeyValueFile& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

}  // namespace apex
