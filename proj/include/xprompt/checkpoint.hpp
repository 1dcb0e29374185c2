#ifndef XPROMPT_CHECKPOINT_HPP
#define XPROMPT_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/training.hpp"

namespace xprompt {

// Checkpoint directory layout:
//   manifest.json     encoder + training config, tensor index
//   params.bin        named float32 little-endian arrays (row-major)
//   prompt_bank.json  m, d, provenance of each prompt vector
//   pos_vocab.txt     one tag per line, line number = id
//   subword_vocab.txt one piece per line, line number = id

/// Writes into a sibling temp directory, then renames over `dir`.
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

std::string encode_tensors(ModelParams<float>& params);
/// Fills tensors by name; every tensor in `params` must be present.
void decode_tensors(const std::string& blob, ModelParams<float>& params);

/// FNV-1a over the canonical config and the raw parameter bytes.
std::string fingerprint(const TrainedModel& model);

/// Writes `content` to `path` via a temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace xprompt

#endif  // XPROMPT_CHECKPOINT_HPP
