#pragma once

#include <string>
#include <vector>

#include "brst/array.hpp"
#include "brst/model.hpp"

namespace brst {

// One manifest line: utt_id <TAB> path <TAB> transcript. The path points
// at a wav or an FBNK feature file, decided by extension.
struct ManifestEntry {
  std::string utt_id;
  std::string path;
  std::vector<std::string> transcript;  // whitespace-split tokens

  bool is_audio() const;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// wav -> fbank, or FBNK payload, as the extension dictates. No CMVN.
Array load_features(const ManifestEntry& entry);

Vocabulary vocab_from_manifest(const std::vector<ManifestEntry>& entries);
TokenSequence tokens_to_ids(const Vocabulary& vocab, const std::vector<std::string>& tokens);

// Synthetic corpus: every token owns a fixed random 8-frame template;
// utterances concatenate templates with per-cell noise plus 4 context
// frames on each side, which keeps every transcript CTC-reachable after
// the x4 subsampling.
struct ToyCorpusSpec {
  int num_utterances = 100;
  int vocab_size = 30;  // content tokens, specials excluded
  uint64_t seed = 0;
  double noise_sigma = 0.1;
  int min_transcript_len = 2;
  int max_transcript_len = 6;
};

// Writes feats/*.fbnk plus manifest.tsv under out_dir; returns the
// manifest path. Bytewise deterministic for a fixed spec.
std::string generate_toy_corpus(const ToyCorpusSpec& spec, const std::string& out_dir);

// Table-1 style presets: baseline, BR, BRA-E, BRA-D, BRA-ED, BRA-E-S18,
// and the CPU-sized toy-* family. vocab_size is the full |U| including
// blank/sos/eos.
ModelConfig preset_config(const std::string& name, int vocab_size);
std::vector<std::string> preset_names();
bool is_toy_preset(const std::string& name);

}  // namespace brst
