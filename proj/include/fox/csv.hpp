#ifndef FOX_CSV_HPP_
#define FOX_CSV_HPP_

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>

#include "fox/errors.hpp"

namespace fox {

// Shortest round-trip decimal form; independent of the C locale.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string format_number(long long v) { return std::to_string(v); }

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view header) : out_(path, std::ios::binary) {
    if (!out_) throw InputError("cannot open " + path.string() + " for writing");
    out_ << header << '\n';
  }

  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      if (!first) out_ << ',';
      out_ << c;
      first = false;
    }
    out_ << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace fox

#endif  // FOX_CSV_HPP_
