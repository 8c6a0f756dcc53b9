#include "resgate/tokenizer.hpp"

#include <cstdio>
#include <stdexcept>

namespace resgate {

std::vector<int> encode_bytes(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string decode_bytes(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= kByteVocabSize) {
      throw std::out_of_range("decode: token id " + std::to_string(id) +
                              " outside vocabulary");
    }
    if (id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

std::string token_label(int id) {
  if (id == kBosId) return "<bos>";
  if (id == kEosId) return "<eos>";
  if (id < 0 || id >= kByteVocabSize) {
    throw std::out_of_range("token_label: id " + std::to_string(id) +
                            " outside vocabulary");
  }
  if (id >= 0x20 && id <= 0x7E) return std::string(1, static_cast<char>(id));
  char buf[8];
  std::snprintf(buf, sizeof buf, "\\x%02X", id);
  return buf;
}

int token_from_label(const std::string& label) {
  if (label == "<bos>") return kBosId;
  if (label == "<eos>") return kEosId;
  if (label.size() == 1) {
    const unsigned char c = static_cast<unsigned char>(label[0]);
    if (c >= 0x20 && c <= 0x7E) return static_cast<int>(c);
  }
  if (label.size() == 4 && label[0] == '\\' && label[1] == 'x') {
    int value = 0;
    for (int i = 2; i < 4; ++i) {
      const char c = label[static_cast<std::size_t>(i)];
      int digit;
      if (c >= '0' && c <= '9') digit = c - '0';
      else if (c >= 'A' && c <= 'F') digit = c - 'A' + 10;
      else if (c >= 'a' && c <= 'f') digit = c - 'a' + 10;
      else digit = -1;
      if (digit < 0) {
        throw std::invalid_argument("token_from_label: bad hex in '" + label +
                                    "'");
      }
      value = value * 16 + digit;
    }
    return value;
  }
  throw std::invalid_argument("token_from_label: unrecognized label '" +
                              label + "'");
}

}  // namespace resgate
