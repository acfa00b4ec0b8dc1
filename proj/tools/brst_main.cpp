// brst: block-reusing speech transformer toolkit
//
// Subcommands: train, decode, evaluate, analyze, count-params,
// gen-corpus, warm-start. All emitted tables are CSV with a header row.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "brst/analysis.hpp"
#include "brst/checkpoint.hpp"
#include "brst/corpus.hpp"
#include "brst/ctc.hpp"
#include "brst/decode.hpp"
#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/parallel.hpp"
#include "brst/train.hpp"

namespace fs = std::filesystem;
using namespace brst;

namespace {

std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string join_tokens(const Vocabulary& vocab, const TokenSequence& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.tokens[static_cast<size_t>(ids[i])];
  }
  return out;
}

void write_cer_csv(const std::string& path, const std::vector<std::pair<std::string, EditStats>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write CER summary: " + path);
  out << "utt_id,substitutions,insertions,deletions,ref_len,cer\n";
  int64_t s = 0, i = 0, d = 0, n = 0;
  for (const auto& [utt, st] : rows) {
    out << utt << ',' << st.substitutions << ',' << st.insertions << ',' << st.deletions << ',' << st.ref_len << ',' << format_score(st.cer) << '\n';
    s += st.substitutions;
    i += st.insertions;
    d += st.deletions;
    n += st.ref_len;
  }
  const double total_cer = n > 0 ? static_cast<double>(s + i + d) / static_cast<double>(n) : static_cast<double>(i);
  out << "TOTAL," << s << ',' << i << ',' << d << ',' << n << ',' << format_score(total_cer) << '\n';
  std::cout << "CER " << format_score(100.0 * total_cer) << "% (" << s << " sub, " << i << " ins, " << d << " del over " << n << " reference tokens)\n";
}

struct DecodedUtt {
  std::string utt_id;
  TokenSequence tokens;
  double score = 0.0;
};

int cmd_train(const std::string& preset, const std::string& config_path, const std::string& manifest_path, const std::string& out_dir, const ConfigMap& flag_overrides, const std::string& resume) {
  auto corpus = read_manifest(manifest_path);
  if (corpus.empty()) throw ConfigError("training manifest is empty: " + manifest_path);
  Vocabulary vocab = vocab_from_manifest(corpus);

  ModelConfig mc;
  TrainConfig tc;
  if (!preset.empty()) {
    mc = preset_config(preset, vocab.size());
    if (is_toy_preset(preset)) {
      // CPU-sized training defaults; flags and config files override
      tc.warmup_steps = 400;
      tc.batch_size = 8;
      tc.max_steps = 1200;
      tc.spec_augment.max_time_frames = 8;
      tc.spec_augment.max_freq_bins = 10;
    }
  }
  if (!config_path.empty()) apply_config(read_config_file(config_path), mc, tc);
  apply_config(flag_overrides, mc, tc);
  if (mc.vocab_size == 0) {
    mc.vocab_size = vocab.size();
  } else if (mc.vocab_size != vocab.size()) {
    throw ConfigError("configured vocab_size " + std::to_string(mc.vocab_size) + " does not match the manifest vocabulary (" + std::to_string(vocab.size()) + " tokens)");
  }
  mc.validate();
  tc.validate();

  TrainResult result = run_training(corpus, tc, mc, vocab, out_dir, resume);
  std::cout << "trained " << result.steps_run << " steps\n";
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";
  std::cout << "metrics: " << result.metrics_csv << "\n";
  return 0;
}

int cmd_decode(const std::string& checkpoint, const std::string& manifest_path, const std::string& method, const std::string& out_dir, int beam, double rescore_weight, int max_len_flag) {
  if (method != "cg" && method != "cp" && method != "att" && method != "att-re") {
    throw InputError("unknown decode method '" + method + "' (valid: cg, cp, att, att-re)");
  }
  auto entries = read_manifest(manifest_path);
  fs::create_directories(out_dir);
  const std::string hyp_path = (fs::path(out_dir) / ("hyps_" + method + ".txt")).string();
  if (entries.empty()) {
    std::ofstream(hyp_path).flush();
    std::cerr << "warning: empty manifest, wrote an empty hypothesis file\n";
    return 0;
  }
  ModelParams params = load_checkpoint(checkpoint);

  std::vector<DecodedUtt> decoded = parallel_map<DecodedUtt>(entries.size(), [&](size_t u) {
    const ManifestEntry& entry = entries[u];
    Array feats = apply_cmvn(load_features(entry));
    EncodeResult enc = encode(params, feats);
    const Array H = enc.output.value();
    DecodedUtt out;
    out.utt_id = entry.utt_id;
    const int max_len = max_len_flag > 0 ? max_len_flag : static_cast<int>(H.rows()) + 5;
    if (method == "cg") {
      Array lp = ctc_head(params, Tensor::constant(H)).value();
      out.tokens = ctc_greedy(lp, params.vocab.blank_id);
      out.score = 0.0;
      for (int64_t t = 0; t < lp.rows(); ++t) {
        double best = lp.at(t, 0);
        for (int64_t k = 1; k < lp.cols(); ++k) best = std::max(best, lp.at(t, k));
        out.score += best;
      }
    } else if (method == "cp") {
      Array lp = ctc_head(params, Tensor::constant(H)).value();
      NBestList nb = ctc_prefix_beam(lp, params.vocab.blank_id, beam);
      out.tokens = nb.best().tokens;
      out.score = nb.best().score;
    } else if (method == "att") {
      NBestList nb = attention_beam_search(params, H, beam, max_len);
      out.tokens = nb.best().tokens;
      out.score = nb.best().score;
    } else {  // att-re
      Array lp = ctc_head(params, Tensor::constant(H)).value();
      NBestList nb = ctc_prefix_beam(lp, params.vocab.blank_id, beam);
      Hypothesis h = attention_rescore(params, H, nb, rescore_weight);
      out.tokens = h.tokens;
      out.score = h.score;
    }
    return out;
  });

  std::ofstream hyp(hyp_path);
  if (!hyp) throw IoError("cannot write hypotheses: " + hyp_path);
  for (const auto& d : decoded) {
    hyp << d.utt_id << '\t' << join_tokens(params.vocab, d.tokens) << '\t' << format_score(d.score) << '\n';
  }
  std::cout << "hypotheses: " << hyp_path << "\n";

  bool have_refs = true;
  for (const auto& e : entries) {
    if (e.transcript.empty()) have_refs = false;
  }
  if (have_refs) {
    std::vector<std::pair<std::string, EditStats>> rows;
    for (size_t u = 0; u < entries.size(); ++u) {
      TokenSequence ref = tokens_to_ids(params.vocab, entries[u].transcript);
      rows.emplace_back(entries[u].utt_id, compute_cer(ref, decoded[u].tokens));
    }
    const std::string cer_path = (fs::path(out_dir) / ("cer_" + method + ".csv")).string();
    write_cer_csv(cer_path, rows);
    std::cout << "cer summary: " << cer_path << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& hyp_path, const std::string& out_path) {
  auto entries = read_manifest(manifest_path);
  std::ifstream hyp(hyp_path);
  if (!hyp) throw IoError("cannot open hypothesis file: " + hyp_path);
  std::map<std::string, std::vector<std::string>> hyps;
  std::string line;
  while (std::getline(hyp, line)) {
    if (line.empty()) continue;
    const size_t tab1 = line.find('\t');
    if (tab1 == std::string::npos) throw InputError("hypothesis line is not tab-separated: " + line);
    const size_t tab2 = line.find('\t', tab1 + 1);
    const std::string utt = line.substr(0, tab1);
    std::istringstream ts(line.substr(tab1 + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab1 - 1));
    std::vector<std::string> toks;
    std::string tok;
    while (ts >> tok) toks.push_back(tok);
    hyps[utt] = std::move(toks);
  }

  // intern token strings so the CER core works on ids
  std::map<std::string, int> intern;
  auto to_ids = [&intern](const std::vector<std::string>& toks) {
    TokenSequence ids;
    for (const auto& t : toks) ids.push_back(intern.emplace(t, static_cast<int>(intern.size())).first->second);
    return ids;
  };

  std::vector<std::pair<std::string, EditStats>> rows;
  for (const auto& e : entries) {
    auto it = hyps.find(e.utt_id);
    if (it == hyps.end()) throw InputError("hypothesis file has no entry for utterance " + e.utt_id);
    rows.emplace_back(e.utt_id, compute_cer(to_ids(e.transcript), to_ids(it->second)));
  }
  write_cer_csv(out_path, rows);
  return 0;
}

int cmd_analyze(const std::string& mode, const std::string& checkpoint_a, const std::string& checkpoint_b, const std::string& manifest_path, const std::string& out_dir, int64_t max_rows, uint64_t seed, double threshold) {
  auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw InputError("analysis manifest is empty");
  fs::create_directories(out_dir);

  ModelParams a = load_checkpoint(checkpoint_a);
  if (mode == "vertical") {
    ActivationDump dump = dump_activations(a, entries, max_rows, seed, "model");
    CKAReport report = vertical_similarity(dump);
    write_cka_csv(report, (fs::path(out_dir) / "vertical.csv").string());
    write_cka_svg(report, (fs::path(out_dir) / "vertical.svg").string(), "vertical similarity");
    auto flags = linearity_flags(report, threshold);
    std::ofstream flag_out((fs::path(out_dir) / "vertical_flags.csv").string());
    flag_out << "site,approximately_linear\n";
    for (const auto& [site, flag] : flags) flag_out << site << ',' << (flag ? 1 : 0) << '\n';
    std::cout << "vertical report: " << (fs::path(out_dir) / "vertical.csv").string() << "\n";
    return 0;
  }
  if (mode == "horizontal") {
    if (checkpoint_b.empty()) throw InputError("horizontal mode needs --checkpoint-b");
    ModelParams b = load_checkpoint(checkpoint_b);
    ActivationDump da = dump_activations(a, entries, max_rows, seed, "a");
    ActivationDump db = dump_activations(b, entries, max_rows, seed, "b");
    CKAReport report = horizontal_similarity(da, db);
    write_cka_csv(report, (fs::path(out_dir) / "horizontal.csv").string());
    write_push_away_csv(report, (fs::path(out_dir) / "push_away.csv").string());
    write_cka_svg(report, (fs::path(out_dir) / "horizontal.svg").string(), "horizontal similarity");
    std::cout << "horizontal report: " << (fs::path(out_dir) / "horizontal.csv").string() << "\n";
    return 0;
  }
  throw InputError("unknown analyze mode '" + mode + "' (valid: horizontal, vertical)");
}

ModelConfig baseline_of(const ModelConfig& cfg) {
  ModelConfig base = cfg;
  base.num_enc_blocks = cfg.encoder_depth();
  base.num_dec_blocks = cfg.decoder_depth();
  base.enc_repeats = 1;
  base.dec_repeats = 1;
  base.adapters_encoder = false;
  base.adapters_decoder = false;
  return base;
}

int cmd_count_params(const std::string& preset, const std::string& checkpoint, int vocab_size, const std::string& out_path) {
  ModelConfig cfg;
  if (!checkpoint.empty()) {
    cfg = peek_checkpoint_config(checkpoint);
  } else if (!preset.empty()) {
    cfg = preset_config(preset, vocab_size);
  } else {
    throw InputError("count-params needs --preset or --checkpoint");
  }
  const ParamReport model = count_params_config(cfg);
  const ParamReport base = count_params_config(baseline_of(cfg));

  struct Row {
    const char* component;
    int64_t count;
    int64_t baseline;
  };
  const Row rows[] = {
      {"frontend", model.frontend, base.frontend},
      {"encoder_blocks", model.encoder_blocks, base.encoder_blocks},
      {"encoder_adapters", model.encoder_adapters, base.encoder_adapters},
      {"decoder_blocks", model.decoder_blocks, base.decoder_blocks},
      {"decoder_adapters", model.decoder_adapters, base.decoder_adapters},
      {"token_embedding", model.token_embedding, base.token_embedding},
      {"ctc_head", model.ctc_head, base.ctc_head},
      {"attention_head", model.attention_head, base.attention_head},
      {"total", model.total(), base.total()},
  };

  auto ratio_str = [](int64_t baseline, int64_t count) {
    if (count == 0) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", static_cast<double>(baseline) / static_cast<double>(count));
    return std::string(buf);
  };

  std::printf("%-18s %14s %14s %10s\n", "component", "params", "baseline", "ratio");
  for (const Row& r : rows) {
    std::printf("%-18s %14lld %14lld %10s\n", r.component, static_cast<long long>(r.count), static_cast<long long>(r.baseline), ratio_str(r.baseline, r.count).c_str());
  }
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write parameter table: " + out_path);
    out << "component,params,baseline,ratio\n";
    for (const Row& r : rows) {
      out << r.component << ',' << r.count << ',' << r.baseline << ',' << ratio_str(r.baseline, r.count) << '\n';
    }
  }
  return 0;
}

int cmd_gen_corpus(const ToyCorpusSpec& spec, const std::string& out_dir) {
  const std::string manifest = generate_toy_corpus(spec, out_dir);
  std::cout << "manifest: " << manifest << "\n";
  return 0;
}

int cmd_warm_start(const std::string& source, const std::string& preset, const std::string& out_path, uint64_t seed) {
  Vocabulary vocab;
  peek_checkpoint_config(source, &vocab);
  ModelConfig target_cfg = preset_config(preset, vocab.size());
  ModelParams target = build_model(target_cfg, vocab, seed);
  PartialLoadReport report = load_partial_checkpoint(target, source);
  save_checkpoint(target, out_path);
  // fresh optimizer sidecar so the result is directly trainable via --resume
  OptimizerState opt = OptimizerState::init(target);
  save_optimizer_state(opt, target, out_path + ".opt");

  const std::string prov_path = out_path + ".provenance.csv";
  std::ofstream prov(prov_path);
  if (!prov) throw IoError("cannot write provenance record: " + prov_path);
  prov << "component,origin\n";
  for (const auto& name : report.copied) prov << name << ",copied\n";
  for (const auto& name : report.fresh) prov << name << ",fresh\n";
  std::cout << "copied " << report.copied.size() << " components, " << report.fresh.size() << " fresh\n";
  std::cout << "checkpoint: " << out_path << "\n";
  std::cout << "provenance: " << prov_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-reusing speech transformer toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model on a manifest");
  std::string t_preset, t_config, t_manifest, t_out, t_resume;
  double t_lambda = -1, t_grad_clip = -1, t_peak_lr = -1;
  int64_t t_steps = -1, t_warmup = -1, t_ckpt_every = -1;
  int t_batch = -1;
  int64_t t_seed = -1;
  train->add_option("--preset", t_preset, "model preset name");
  train->add_option("--config", t_config, "key=value config file");
  train->add_option("--manifest", t_manifest, "training manifest")->required();
  train->add_option("--out", t_out, "output directory")->required();
  train->add_option("--resume", t_resume, "checkpoint to resume from");
  train->add_option("--lambda", t_lambda, "CTC weight in the joint loss");
  train->add_option("--grad-clip", t_grad_clip, "global gradient clip");
  train->add_option("--peak-lr", t_peak_lr, "peak learning rate");
  train->add_option("--warmup", t_warmup, "warmup steps");
  train->add_option("--steps", t_steps, "max training steps");
  train->add_option("--batch", t_batch, "batch size");
  train->add_option("--seed", t_seed, "training seed");
  train->add_option("--checkpoint-every", t_ckpt_every, "periodic checkpoint interval");

  // decode
  auto* decode = app.add_subcommand("decode", "decode a manifest with a checkpoint");
  std::string d_ckpt, d_manifest, d_method = "att-re", d_out;
  int d_beam = 10, d_max_len = 0;
  double d_weight = 0.3;
  decode->add_option("--checkpoint", d_ckpt, "model checkpoint")->required();
  decode->add_option("--manifest", d_manifest, "manifest to decode")->required();
  decode->add_option("--method", d_method, "cg, cp, att, or att-re");
  decode->add_option("--out", d_out, "output directory")->required();
  decode->add_option("--beam", d_beam, "beam size / n-best size");
  decode->add_option("--rescore-weight", d_weight, "CTC weight for att-re");
  decode->add_option("--max-len", d_max_len, "max emitted tokens (0: auto)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "score a hypothesis file against references");
  std::string e_manifest, e_hyp, e_out;
  evaluate->add_option("--manifest", e_manifest, "reference manifest")->required();
  evaluate->add_option("--hyp", e_hyp, "hypothesis file from decode")->required();
  evaluate->add_option("--out", e_out, "CER csv path")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "similarity analysis reports");
  std::string a_mode = "vertical", a_ckpt, a_ckpt_b, a_manifest, a_out;
  int64_t a_max_rows = 4096;
  int64_t a_seed = 0;
  double a_threshold = 0.95;
  analyze->add_option("--mode", a_mode, "horizontal or vertical");
  analyze->add_option("--checkpoint", a_ckpt, "checkpoint (model a)")->required();
  analyze->add_option("--checkpoint-b", a_ckpt_b, "second checkpoint (horizontal)");
  analyze->add_option("--manifest", a_manifest, "evaluation manifest")->required();
  analyze->add_option("--out", a_out, "output directory")->required();
  analyze->add_option("--max-rows", a_max_rows, "activation row budget");
  analyze->add_option("--seed", a_seed, "row subsampling seed");
  analyze->add_option("--linearity-threshold", a_threshold, "vertical cka flag threshold");

  // count-params
  auto* count = app.add_subcommand("count-params", "parameter accounting per component");
  std::string c_preset, c_ckpt, c_out;
  int c_vocab = 4233;
  count->add_option("--preset", c_preset, "model preset name");
  count->add_option("--checkpoint", c_ckpt, "count an existing checkpoint");
  count->add_option("--vocab", c_vocab, "vocabulary size for preset mode");
  count->add_option("--out", c_out, "also write the table as CSV");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic toy corpus");
  ToyCorpusSpec g_spec;
  std::string g_out;
  int64_t g_seed = 0;
  gen->add_option("--out", g_out, "corpus directory")->required();
  gen->add_option("--num-utts", g_spec.num_utterances, "number of utterances");
  gen->add_option("--vocab", g_spec.vocab_size, "content token inventory");
  gen->add_option("--seed", g_seed, "corpus seed");
  gen->add_option("--noise", g_spec.noise_sigma, "template noise sigma");
  gen->add_option("--min-len", g_spec.min_transcript_len, "min transcript length");
  gen->add_option("--max-len", g_spec.max_transcript_len, "max transcript length");

  // warm-start
  auto* warm = app.add_subcommand("warm-start", "initialize a preset from a checkpoint");
  std::string w_source, w_preset, w_out;
  int64_t w_seed = 0;
  warm->add_option("--source", w_source, "source checkpoint")->required();
  warm->add_option("--preset", w_preset, "target preset")->required();
  warm->add_option("--out", w_out, "output checkpoint")->required();
  warm->add_option("--seed", w_seed, "seed for fresh components");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      ConfigMap overrides;
      if (t_lambda >= 0) overrides["train.lambda"] = std::to_string(t_lambda);
      if (t_grad_clip >= 0) overrides["train.grad_clip"] = std::to_string(t_grad_clip);
      if (t_peak_lr >= 0) overrides["train.peak_lr"] = std::to_string(t_peak_lr);
      if (t_warmup >= 0) overrides["train.warmup_steps"] = std::to_string(t_warmup);
      if (t_steps >= 0) overrides["train.max_steps"] = std::to_string(t_steps);
      if (t_batch >= 0) overrides["train.batch_size"] = std::to_string(t_batch);
      if (t_seed >= 0) overrides["train.seed"] = std::to_string(t_seed);
      if (t_ckpt_every >= 0) overrides["train.checkpoint_every"] = std::to_string(t_ckpt_every);
      return cmd_train(t_preset, t_config, t_manifest, t_out, overrides, t_resume);
    }
    if (decode->parsed()) return cmd_decode(d_ckpt, d_manifest, d_method, d_out, d_beam, d_weight, d_max_len);
    if (evaluate->parsed()) return cmd_evaluate(e_manifest, e_hyp, e_out);
    if (analyze->parsed()) return cmd_analyze(a_mode, a_ckpt, a_ckpt_b, a_manifest, a_out, a_max_rows, static_cast<uint64_t>(a_seed), a_threshold);
    if (count->parsed()) return cmd_count_params(c_preset, c_ckpt, c_vocab, c_out);
    if (gen->parsed()) {
      g_spec.seed = static_cast<uint64_t>(g_seed);
      return cmd_gen_corpus(g_spec, g_out);
    }
    if (warm->parsed()) return cmd_warm_start(w_source, w_preset, w_out, static_cast<uint64_t>(w_seed));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
