#pragma once

#include <string>
#include <vector>

#include "nesr/train.hpp"

namespace nesr {

// Single-file checkpoint:
//   magic "NSCK" | u16 version | u64 manifest_len | manifest JSON (UTF-8) |
//   per named tensor: u16 name_len | name | u64 blob_len | tensor blob in
//   the "NSRT" container format.
// The manifest records {model, train, iteration, rng_state, adam} and the
// tensor name order: every weight from ModelWeights::parameters() followed
// by its optimizer moments opt.<name>.m and opt.<name>.v.
constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const unsigned char* data, std::size_t len);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nesr
