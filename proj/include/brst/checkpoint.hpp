#pragma once

#include <map>
#include <string>
#include <vector>

#include "brst/model.hpp"

namespace brst {

// Container layout: 5-byte magic "BRST1", u64 little-endian JSON length,
// JSON metadata (config, vocab, entry manifest with byte offsets), then
// the raw float64 little-endian payload in manifest order.
inline constexpr char kCheckpointMagic[] = "BRST1";

struct RawEntry {
  std::string name;
  std::vector<int64_t> shape;
  int64_t offset = 0;  // into the payload region
};

struct RawContainer {
  std::string meta_json;
  std::vector<RawEntry> entries;
  std::map<std::string, Array> arrays;
};

// Generic container I/O (used for model checkpoints and the optimizer
// sidecar). Throws CheckpointError naming the first bad component.
void write_container(const std::string& path, const std::string& meta_json, const std::vector<std::pair<std::string, const Array*>>& entries);
RawContainer read_container(const std::string& path);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);
// Config/vocab only, without loading the payload.
ModelConfig peek_checkpoint_config(const std::string& path, Vocabulary* vocab_out = nullptr);

struct PartialLoadReport {
  std::vector<std::string> copied;
  std::vector<std::string> fresh;  // left at target initialization
};

// Copies every component whose name and shape match; everything else in
// the target keeps its initialization. Requires the block structure
// (distinct block counts), dims, and vocabulary to agree.
PartialLoadReport load_partial_checkpoint(ModelParams& target, const std::string& source_path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace brst
