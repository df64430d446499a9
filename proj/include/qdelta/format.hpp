#pragma once

#include <charconv>
#include <fstream>
#include <initializer_list>
#include <string>
#include <system_error>
#include <vector>

#include "qdelta/error.hpp"

namespace qdelta {

/// Shortest decimal that parses back to exactly `x`. Locale independent.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

/// Minimal CSV writer: '\n' line endings, '.' decimals, no quoting (all fields
/// written by this project are numeric or plain identifiers).
class CsvWriter {
 public:
  CsvWriter() = default;

  void header(std::initializer_list<std::string> cols) { header(std::vector<std::string>(cols)); }

  void header(const std::vector<std::string>& cols) {
    row_begin();
    for (const auto& c : cols) field(c);
    row_end();
  }

  CsvWriter& field(const std::string& s) {
    if (!first_) out_ += ',';
    out_ += s;
    first_ = false;
    return *this;
  }
  CsvWriter& field(const char* s) { return field(std::string(s)); }
  CsvWriter& field(double x) { return field(format_double(x)); }
  CsvWriter& field(long long x) { return field(std::to_string(x)); }
  CsvWriter& field(unsigned long long x) { return field(std::to_string(x)); }
  CsvWriter& field(int x) { return field(std::to_string(x)); }
  CsvWriter& field(long x) { return field(std::to_string(x)); }
  CsvWriter& field(unsigned long x) { return field(std::to_string(x)); }
  CsvWriter& field(unsigned x) { return field(std::to_string(x)); }
  CsvWriter& field(bool b) { return field(b ? "1" : "0"); }

  void row_begin() { first_ = true; }
  void row_end() { out_ += '\n'; }

  const std::string& str() const { return out_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << out_;
    if (!f) throw IoError("write failed: " + path);
  }

 private:
  std::string out_;
  bool first_ = true;
};

}  // namespace qdelta
