#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace durastack::csv {

/// Reads RFC 4180 records (quoted fields may contain commas, quotes and
/// newlines). Tracks the physical line where each record starts.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Next record, or nullopt at end of input.
  std::optional<std::vector<std::string>> next();
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace durastack::csv
