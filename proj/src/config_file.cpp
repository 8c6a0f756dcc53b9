#include "resgate/config_file.hpp"

#include <sstream>
#include <stdexcept>

#include "resgate/io.hpp"

namespace resgate {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r'))
    --e;
  return s.substr(b, e - b);
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full) != 0) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": duplicate key '" + full + "'");
    }
    out[full] = value;
  }
  return out;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  return parse_config_text(read_file(path));
}

}  // namespace resgate
