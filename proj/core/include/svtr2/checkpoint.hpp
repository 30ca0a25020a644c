#pragma once

#include <cstdint>
#include <string>

#include "svtr2/charset.hpp"
#include "svtr2/model.hpp"

namespace svtr2 {

// Checkpoint container. Layout, all little-endian:
//
//   bytes 0..7   magic "SVTR2CKP"
//   bytes 8..11  u32 header byte length
//   header       UTF-8 JSON: format_version, model description, charset
//                characters and hash, training phase, step counter, and the
//                array inventory [[name, shape], ...] sorted by name
//   payload      raw f32 array data, concatenated in inventory order
//
// Writing the inventory in sorted name order makes save(load(x)) reproduce
// x byte for byte. The charset characters live in the header so a checkpoint
// is decodable on its own; the hash lets consumers reject a mismatched
// inventory cheaply.
//
// Errors: ParseError for bad magic, unknown format version, malformed
// header, or an inventory that contradicts the declared architecture;
// IoError for unreadable/truncated files.

inline constexpr char kCheckpointMagic[9] = "SVTR2CKP";
inline constexpr int kCheckpointVersion = 1;

struct LoadedCheckpoint {
  Model<float> model;
  Charset charset;
  std::string phase;  // "A", "B", or "inference"
  long long step = 0;
};

void save_checkpoint(const std::string& path, const Model<float>& model, const Charset& charset,
                     const std::string& phase, long long step);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads `in_path`, drops the training-only context branch, and writes the
// result to `out_path` with phase "inference". Recognition arrays are copied
// bit for bit, so the stripped model scores images identically.
void strip_for_inference(const std::string& in_path, const std::string& out_path);

}  // namespace svtr2
