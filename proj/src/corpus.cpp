#include "brst/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/rng.hpp"

namespace brst {

namespace fs = std::filesystem;

bool ManifestEntry::is_audio() const {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".wav") == 0;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t line_no = 0;
  std::vector<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab1 = line.find('\t');
    if (tab1 == std::string::npos) {
      throw InputError("manifest line " + std::to_string(line_no) + " is not tab-separated: " + path);
    }
    const size_t tab2 = line.find('\t', tab1 + 1);
    ManifestEntry e;
    e.utt_id = line.substr(0, tab1);
    e.path = tab2 == std::string::npos ? line.substr(tab1 + 1) : line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (e.utt_id.empty() || e.path.empty()) {
      throw InputError("manifest line " + std::to_string(line_no) + " has an empty field: " + path);
    }
    if (tab2 != std::string::npos) {
      std::istringstream ts(line.substr(tab2 + 1));
      std::string tok;
      while (ts >> tok) e.transcript.push_back(tok);
    }
    entries.push_back(std::move(e));
  }
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.utt_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw InputError("manifest has duplicate utt_ids: " + path);
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& e : entries) {
    out << e.utt_id << '\t' << e.path;
    out << '\t';
    for (size_t i = 0; i < e.transcript.size(); ++i) {
      if (i) out << ' ';
      out << e.transcript[i];
    }
    out << '\n';
  }
}

Array load_features(const ManifestEntry& entry) {
  try {
    if (entry.is_audio()) return compute_fbank(read_wav(entry.path));
    return read_fbnk(entry.path);
  } catch (const Error& err) {
    throw IoError("utterance " + entry.utt_id + ": " + err.what());
  }
}

Vocabulary vocab_from_manifest(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> tokens;
  for (const auto& e : entries) {
    tokens.insert(tokens.end(), e.transcript.begin(), e.transcript.end());
  }
  return Vocabulary::build(tokens);
}

TokenSequence tokens_to_ids(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
  TokenSequence ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.require(t));
  return ids;
}

// ---- toy corpus ----

static std::string toy_token_name(int index) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "u%02d", index);
  return buf;
}

std::string generate_toy_corpus(const ToyCorpusSpec& spec, const std::string& out_dir) {
  if (spec.num_utterances < 1 || spec.vocab_size < 1) throw ConfigError("toy corpus needs utterances and tokens");
  if (spec.min_transcript_len < 1 || spec.max_transcript_len < spec.min_transcript_len) {
    throw ConfigError("toy corpus transcript length range is invalid");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "feats", ec);
  if (ec) throw IoError("cannot create corpus directory " + out_dir + ": " + ec.message());

  // fixed per-token templates, independent of the utterance stream
  std::vector<Array> templates;
  templates.reserve(static_cast<size_t>(spec.vocab_size));
  for (int tok = 0; tok < spec.vocab_size; ++tok) {
    Rng trng(mix_seed(spec.seed, 1000 + static_cast<uint64_t>(tok)));
    templates.push_back(Array::uniform({8, kNumMelBins}, trng, -2.0, 2.0));
  }

  std::vector<ManifestEntry> entries;
  for (int u = 0; u < spec.num_utterances; ++u) {
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(u)));
    const int len = static_cast<int>(rng.uniform_int(spec.min_transcript_len, spec.max_transcript_len));
    std::vector<int> token_ids;
    for (int i = 0; i < len; ++i) token_ids.push_back(static_cast<int>(rng.uniform_int(0, spec.vocab_size - 1)));

    const int64_t frames = 8 * len + 8;  // 4 context frames each side
    Array feats({frames, kNumMelBins});
    for (int64_t t = 0; t < frames; ++t) {
      for (int64_t d = 0; d < kNumMelBins; ++d) feats.at(t, d) = spec.noise_sigma * rng.gauss();
    }
    for (int i = 0; i < len; ++i) {
      const Array& tmpl = templates[static_cast<size_t>(token_ids[static_cast<size_t>(i)])];
      for (int64_t f = 0; f < 8; ++f) {
        for (int64_t d = 0; d < kNumMelBins; ++d) feats.at(4 + 8 * i + f, d) += tmpl.at(f, d);
      }
    }

    char utt[16];
    std::snprintf(utt, sizeof(utt), "utt%04d", u);
    ManifestEntry e;
    e.utt_id = utt;
    e.path = (fs::path(out_dir) / "feats" / (std::string(utt) + ".fbnk")).string();
    for (int id : token_ids) e.transcript.push_back(toy_token_name(id));
    write_fbnk(e.path, feats);
    entries.push_back(std::move(e));
  }
  const std::string manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  write_manifest(manifest_path, entries);
  return manifest_path;
}

// ---- presets ----

std::vector<std::string> preset_names() {
  return {"baseline", "BR", "BRA-E", "BRA-D", "BRA-ED", "BRA-E-S18",
          "toy-baseline", "toy-BR", "toy-BRA-E", "toy-BRA-D", "toy-BRA-ED"};
}

bool is_toy_preset(const std::string& name) { return name.rfind("toy-", 0) == 0; }

ModelConfig preset_config(const std::string& name, int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  std::string kind = name;
  if (is_toy_preset(name)) {
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.ff_dim = 256;
    kind = name.substr(4);
  } else {
    cfg.d_model = 256;
    cfg.heads = 4;
    cfg.ff_dim = 2048;
  }
  const int full_depth_enc = is_toy_preset(name) ? 4 : 12;
  const int full_depth_dec = is_toy_preset(name) ? 2 : 6;

  if (kind == "baseline") {
    cfg.num_enc_blocks = full_depth_enc;
    cfg.num_dec_blocks = full_depth_dec;
    cfg.enc_repeats = 1;
    cfg.dec_repeats = 1;
    return cfg;
  }
  cfg.num_enc_blocks = 1;
  cfg.num_dec_blocks = 1;
  cfg.enc_repeats = full_depth_enc;
  cfg.dec_repeats = full_depth_dec;
  if (kind == "BR") {
    return cfg;
  }
  if (kind == "BRA-E") {
    cfg.adapters_encoder = true;
    return cfg;
  }
  if (kind == "BRA-D") {
    cfg.adapters_decoder = true;
    return cfg;
  }
  if (kind == "BRA-ED") {
    cfg.adapters_encoder = true;
    cfg.adapters_decoder = true;
    return cfg;
  }
  if (kind == "BRA-E-S18" && !is_toy_preset(name)) {
    cfg.adapters_encoder = true;
    cfg.enc_repeats = 18;
    return cfg;
  }
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "'; valid presets: " + valid);
}

}  // namespace brst
