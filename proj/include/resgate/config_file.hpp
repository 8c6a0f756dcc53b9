#pragma once

#include <map>
#include <string>

namespace resgate {

// Flat "key = value" configuration text with [section] headers and '#'
// comments. Keys inside a section come back as "section.key"; duplicate keys
// and malformed lines throw with the line number.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::string& path);

}  // namespace resgate
