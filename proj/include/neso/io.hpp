#pragma once

// On-disk formats.
//
// Array file:
//   neso-array v1
//   kind <control|grid|...>
//   axes <D>
//   axis <count> <order> <lo> <hi>      (D lines; order 1 for plain grids)
//   data <N>
//   <N little-endian float64 values, row-major>
//
// Key-value config: one `key = value` per line, `#` starts a comment.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neso/spline_basis.hpp"

namespace neso {

struct ArrayAxis {
  int count = 0;
  int order = 1;
  Interval domain;
};

struct ArrayFile {
  std::string kind;
  std::vector<ArrayAxis> axes;
  std::vector<double> values;
};

void write_array_file(std::ostream& os, const ArrayFile& file);
ArrayFile read_array_file(std::istream& is);

void save_array_file(const std::filesystem::path& path, const ArrayFile& file);
ArrayFile load_array_file(const std::filesystem::path& path);

void write_f64_le(std::ostream& os, std::span<const double> values);
std::vector<double> read_f64_le(std::istream& is, std::size_t count);

class KeyValues {
 public:
  KeyValues() = default;
  explicit KeyValues(std::map<std::string, std::string> entries) : entries_(std::move(entries)) {}

  static KeyValues parse(std::istream& is);
  static KeyValues load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma- or space-separated list of reals.
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

  std::string require_string(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

  void write(std::ostream& os) const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace neso
