#include "neso/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "neso/error.hpp"

namespace neso {

namespace {

constexpr const char* kArrayMagic = "neso-array v1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string read_line(std::istream& is, const char* what) {
  std::string line;
  if (!std::getline(is, line)) {
    throw Error(ErrorKind::Io, std::string("truncated header, expected ") + what);
  }
  return trim(line);
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorKind::Configuration, "key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_f64_le(std::ostream& os, std::span<const double> values) {
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
      os.write(bytes, 8);
    }
  }
  if (!os) throw Error(ErrorKind::Io, "write failed");
}

std::vector<double> read_f64_le(std::istream& is, std::size_t count) {
  std::vector<double> out(count);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * 8));
  } else {
    for (auto& v : out) {
      unsigned char bytes[8];
      is.read(reinterpret_cast<char*>(bytes), 8);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes[i]} << (8 * i);
      v = std::bit_cast<double>(bits);
    }
  }
  if (!is) throw Error(ErrorKind::Io, "payload shorter than declared");
  return out;
}

void write_array_file(std::ostream& os, const ArrayFile& file) {
  os << kArrayMagic << '\n';
  os << "kind " << file.kind << '\n';
  os << "axes " << file.axes.size() << '\n';
  for (const auto& a : file.axes) {
    os << "axis " << a.count << ' ' << a.order << ' ' << format_double(a.domain.lo) << ' '
       << format_double(a.domain.hi) << '\n';
  }
  os << "data " << file.values.size() << '\n';
  write_f64_le(os, file.values);
}

ArrayFile read_array_file(std::istream& is) {
  if (read_line(is, "magic") != kArrayMagic) throw Error(ErrorKind::Io, "not a neso array file");
  ArrayFile file;
  std::string word;
  {
    std::istringstream line(read_line(is, "kind"));
    line >> word >> file.kind;
    if (word != "kind") throw Error(ErrorKind::Io, "expected 'kind' line");
  }
  std::size_t naxes = 0;
  {
    std::istringstream line(read_line(is, "axes"));
    line >> word >> naxes;
    if (word != "axes" || !line) throw Error(ErrorKind::Io, "expected 'axes' line");
  }
  std::size_t expected = 1;
  for (std::size_t i = 0; i < naxes; ++i) {
    std::istringstream line(read_line(is, "axis"));
    ArrayAxis a;
    line >> word >> a.count >> a.order >> a.domain.lo >> a.domain.hi;
    if (word != "axis" || !line || a.count < 1) throw Error(ErrorKind::Io, "malformed axis line");
    expected *= static_cast<std::size_t>(a.count);
    file.axes.push_back(a);
  }
  std::size_t n = 0;
  {
    std::istringstream line(read_line(is, "data"));
    line >> word >> n;
    if (word != "data" || !line) throw Error(ErrorKind::Io, "expected 'data' line");
  }
  if (naxes > 0 && n != expected) throw Error(ErrorKind::Io, "data length does not match axes");
  file.values = read_f64_le(is, n);
  return file;
}

void save_array_file(const std::filesystem::path& path, const ArrayFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  write_array_file(os, file);
}

ArrayFile load_array_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_array_file(is);
}

KeyValues KeyValues::parse(std::istream& is) {
  std::map<std::string, std::string> entries;
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Configuration,
                  "line " + std::to_string(lineno) + ": expected key = value");
    }
    entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return KeyValues(std::move(entries));
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Io, "cannot open config " + path.string());
  return parse(is);
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  return v ? parse_number<double>(*v, key) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = find(key);
  return v ? parse_number<std::int64_t>(*v, key) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = find(key);
  return v ? parse_number<std::uint64_t>(*v, key) : fallback;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw Error(ErrorKind::Configuration, "key '" + key + "': expected a boolean");
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           std::vector<double> fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::string text = *v;
  for (char& c : text) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(text);
  std::vector<double> out;
  std::string token;
  while (is >> token) out.push_back(parse_number<double>(token, key));
  return out;
}

std::string KeyValues::require_string(const std::string& key) const {
  const auto v = find(key);
  if (!v) throw Error(ErrorKind::Configuration, "missing required key '" + key + "'");
  return *v;
}

void KeyValues::write(std::ostream& os) const {
  for (const auto& [k, v] : entries_) os << k << " = " << v << '\n';
}

}  // namespace neso
