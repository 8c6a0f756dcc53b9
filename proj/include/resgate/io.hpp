#pragma once

#include <string>

#include "resgate/model.hpp"

namespace resgate {

// Writes content to path atomically: a temp file in the same directory is
// renamed over the destination once fully written.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Checkpoint container (all integers and floats little-endian):
//   magic "RGCK", u32 version (=1),
//   u32 config fields: n_layers, hidden, n_heads, ff_dim, vocab, max_seq,
//                      gate shape, sharing, placement, arch, granularity,
//   u32 blob count, then per blob in declaration order:
//     u32 name length, name bytes, u32 ndims, u32 dims[], f32 values[].
// Parameter order and names follow Model::named_parameters().
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace resgate
