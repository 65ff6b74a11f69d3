#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dpp {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Header plus rows of string cells. Fields containing a comma, quote or line
// break are quoted on output, with quotes doubled.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index or -1.
  std::ptrdiff_t column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
std::string to_csv(const CsvTable& table);
std::string csv_escape(std::string_view field);

// %.17g, so the text reads back to the same double.
std::string format_double(double v);

}  // namespace dpp
