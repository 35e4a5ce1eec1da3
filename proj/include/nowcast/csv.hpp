#pragma once

#include <string>
#include <vector>

namespace nowcast {

/// Shortest decimal representation that round-trips the exact double.
std::string format_double(double v);

/// Strict double parse; `context` names the field in error messages.
double parse_double(const std::string& text, const std::string& context);

/// Strict integer parse.
long long parse_int(const std::string& text, const std::string& context);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Minimal comma-separated reader/writer. Fields may not contain commas or
// newlines; none of the pipeline formats need quoting.
CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

}  // namespace nowcast
