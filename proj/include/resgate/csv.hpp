#pragma once

#include <string>
#include <vector>

namespace resgate {

// RFC-4180 style: fields containing commas, quotes, or newlines are quoted,
// with embedded quotes doubled. Locale-independent decimal formatting.
std::string csv_escape(const std::string& field);
std::string csv_join(const std::vector<std::string>& fields);

// Parses a whole document (handles quoted fields spanning newlines).
std::vector<std::vector<std::string>> csv_parse(const std::string& text);

// Decimal form that parses back to the exact same IEEE double.
std::string fmt_double(double v);
std::string fmt_fixed(double v, int precision);

}  // namespace resgate
