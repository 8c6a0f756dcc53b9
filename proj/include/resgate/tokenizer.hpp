#pragma once

#include <string>
#include <vector>

namespace resgate {

// Byte-level tokenizer: ids 0..255 are raw bytes, then BOS and EOS.
constexpr int kBosId = 256;
constexpr int kEosId = 257;
constexpr int kByteVocabSize = 258;

std::vector<int> encode_bytes(const std::string& text);
std::string decode_bytes(const std::vector<int>& ids);  // specials skipped

// Human-readable label for one token id: printable ASCII as itself,
// everything else escaped; used as CSV column headers.
std::string token_label(int id);

// Inverse of token_label; throws on strings no id produces.
int token_from_label(const std::string& label);

}  // namespace resgate
