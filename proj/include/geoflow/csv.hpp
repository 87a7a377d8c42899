#pragma once

#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoflow::csv {

/// 17 significant digits: enough to roundtrip any double exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Comma-separated UTF-8 with a header row; numeric cells printed at
/// full double precision.
class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("csv: cannot open " + path + " for writing");
    columns_ = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  void row(std::span<const double> values) {
    if (values.size() != columns_)
      throw std::invalid_argument("csv: row width " + std::to_string(values.size()) +
                                  ", expected " + std::to_string(columns_));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_double(values[i]);
    }
    out_ << '\n';
  }

  void row(std::initializer_list<double> values) {
    row(std::span<const double>(values.begin(), values.size()));
  }

 private:
  std::ofstream out_;
  std::size_t columns_ = 0;
};

}  // namespace geoflow::csv
