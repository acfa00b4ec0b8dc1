#include "brst/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "brst/errors.hpp"

namespace brst {

using nlohmann::json;

namespace {

json config_to_json_obj(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model},
              {"heads", cfg.heads},
              {"ff_dim", cfg.ff_dim},
              {"num_enc_blocks", cfg.num_enc_blocks},
              {"num_dec_blocks", cfg.num_dec_blocks},
              {"enc_repeats", cfg.enc_repeats},
              {"dec_repeats", cfg.dec_repeats},
              {"adapters_encoder", cfg.adapters_encoder},
              {"adapters_decoder", cfg.adapters_decoder},
              {"vocab_size", cfg.vocab_size},
              {"subsample_factor", cfg.subsample_factor}};
}

ModelConfig config_from_json_obj(const json& j) {
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ff_dim = j.at("ff_dim").get<int>();
  cfg.num_enc_blocks = j.at("num_enc_blocks").get<int>();
  cfg.num_dec_blocks = j.at("num_dec_blocks").get<int>();
  cfg.enc_repeats = j.at("enc_repeats").get<int>();
  cfg.dec_repeats = j.at("dec_repeats").get<int>();
  cfg.adapters_encoder = j.at("adapters_encoder").get<bool>();
  cfg.adapters_decoder = j.at("adapters_decoder").get<bool>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.subsample_factor = j.at("subsample_factor").get<int>();
  return cfg;
}

void write_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& json_text) {
  return config_from_json_obj(json::parse(json_text));
}

void write_container(const std::string& path, const std::string& meta_json, const std::vector<std::pair<std::string, const Array*>>& entries) {
  json meta = json::parse(meta_json);
  json manifest = json::array();
  int64_t offset = 0;
  for (const auto& [name, arr] : entries) {
    json e;
    e["name"] = name;
    e["shape"] = arr->shape();
    e["dtype"] = "f64";
    e["offset"] = offset;
    e["bytes"] = arr->numel() * static_cast<int64_t>(sizeof(double));
    manifest.push_back(std::move(e));
    offset += arr->numel() * static_cast<int64_t>(sizeof(double));
  }
  meta["entries"] = std::move(manifest);
  const std::string header = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 5);
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, arr] : entries) {
    out.write(reinterpret_cast<const char*>(arr->data()), static_cast<std::streamsize>(arr->numel() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint payload: " + path);
}

RawContainer read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::strncmp(magic, kCheckpointMagic, 5) != 0) {
    throw CheckpointError("bad checkpoint magic in " + path);
  }
  const uint64_t header_len = read_u64(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path);

  RawContainer c;
  c.meta_json = header;
  json meta = json::parse(header);
  const std::streampos payload_start = in.tellg();
  for (const auto& e : meta.at("entries")) {
    RawEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<std::vector<int64_t>>();
    entry.offset = e.at("offset").get<int64_t>();
    if (e.at("dtype").get<std::string>() != "f64") {
      throw CheckpointError("unsupported dtype for component " + entry.name + " in " + path);
    }
    Array arr(entry.shape);
    in.seekg(payload_start + static_cast<std::streamoff>(entry.offset));
    in.read(reinterpret_cast<char*>(arr.data()), static_cast<std::streamsize>(arr.numel() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint payload at component " + entry.name + " in " + path);
    c.arrays.emplace(entry.name, std::move(arr));
    c.entries.push_back(std::move(entry));
  }
  return c;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  json meta;
  meta["format_version"] = 1;
  meta["model_config"] = config_to_json_obj(params.cfg);
  meta["vocab"] = json{{"tokens", params.vocab.tokens},
                       {"blank_id", params.vocab.blank_id},
                       {"sos_id", params.vocab.sos_id},
                       {"eos_id", params.vocab.eos_id}};
  std::vector<std::pair<std::string, const Array*>> entries;
  const auto named = params.named_params();
  entries.reserve(named.size());
  std::vector<Array> holders;  // keep values alive through the write
  holders.reserve(named.size());
  for (const auto& [name, tensor] : named) holders.push_back(tensor.value());
  for (size_t i = 0; i < named.size(); ++i) entries.emplace_back(named[i].first, &holders[i]);
  write_container(path, meta.dump(), entries);
}

static Vocabulary vocab_from_meta(const json& meta) {
  Vocabulary v;
  v.tokens = meta.at("vocab").at("tokens").get<std::vector<std::string>>();
  v.blank_id = meta.at("vocab").at("blank_id").get<int>();
  v.sos_id = meta.at("vocab").at("sos_id").get<int>();
  v.eos_id = meta.at("vocab").at("eos_id").get<int>();
  v.rebuild_index();
  return v;
}

ModelConfig peek_checkpoint_config(const std::string& path, Vocabulary* vocab_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::strncmp(magic, kCheckpointMagic, 5) != 0) throw CheckpointError("bad checkpoint magic in " + path);
  const uint64_t header_len = read_u64(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path);
  json meta = json::parse(header);
  if (vocab_out) *vocab_out = vocab_from_meta(meta);
  return config_from_json_obj(meta.at("model_config"));
}

ModelParams load_checkpoint(const std::string& path) {
  RawContainer c = read_container(path);
  json meta = json::parse(c.meta_json);
  ModelConfig cfg = config_from_json_obj(meta.at("model_config"));
  Vocabulary vocab = vocab_from_meta(meta);
  ModelParams params = build_model(cfg, vocab, 0);
  for (auto& [name, tensor] : params.named_params()) {
    auto it = c.arrays.find(name);
    if (it == c.arrays.end()) throw CheckpointError("checkpoint missing component " + name + " in " + path);
    if (it->second.shape() != tensor.shape()) {
      throw CheckpointError("checkpoint shape mismatch for component " + name + ": file has " + it->second.shape_str() + ", model wants " + shape_to_string(tensor.shape()));
    }
    Tensor t = tensor;
    t.value() = it->second;
  }
  return params;
}

PartialLoadReport load_partial_checkpoint(ModelParams& target, const std::string& source_path) {
  Vocabulary src_vocab;
  const ModelConfig src_cfg = peek_checkpoint_config(source_path, &src_vocab);
  const ModelConfig& dst_cfg = target.cfg;
  if (src_cfg.num_enc_blocks != dst_cfg.num_enc_blocks || src_cfg.num_dec_blocks != dst_cfg.num_dec_blocks) {
    throw CheckpointError("cannot warm start: source has " + std::to_string(src_cfg.num_enc_blocks) + "/" + std::to_string(src_cfg.num_dec_blocks) + " distinct encoder/decoder blocks, target wants " + std::to_string(dst_cfg.num_enc_blocks) + "/" + std::to_string(dst_cfg.num_dec_blocks) + " (no merge rule exists)");
  }
  if (src_cfg.d_model != dst_cfg.d_model || src_cfg.ff_dim != dst_cfg.ff_dim || src_cfg.heads != dst_cfg.heads) {
    throw CheckpointError("cannot warm start: model dimensions differ");
  }
  if (src_vocab.tokens != target.vocab.tokens) {
    throw CheckpointError("cannot warm start: vocabularies differ");
  }

  RawContainer c = read_container(source_path);
  PartialLoadReport report;
  for (auto& [name, tensor] : target.named_params()) {
    auto it = c.arrays.find(name);
    if (it == c.arrays.end()) {
      report.fresh.push_back(name);
      continue;
    }
    if (it->second.shape() != tensor.shape()) {
      throw CheckpointError("warm start shape mismatch for component " + name);
    }
    Tensor t = tensor;
    t.value() = it->second;
    report.copied.push_back(name);
  }
  return report;
}

}  // namespace brst
