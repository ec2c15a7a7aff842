#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace pwrd::csv {

using Row = std::vector<std::string>;

// Reads RFC 4180 style CSV (quoted fields, doubled quotes, CRLF tolerated).
// Blank lines are skipped. `line_numbers`, when given, receives the 1-based
// source line on which each returned record starts.
std::vector<Row> read(std::istream& in, std::vector<int>* line_numbers = nullptr);

std::string quote_if_needed(std::string_view field);

void write_row(std::ostream& out, const Row& row);

}  // namespace pwrd::csv
