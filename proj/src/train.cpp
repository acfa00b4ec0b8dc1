#include "brst/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "brst/checkpoint.hpp"
#include "brst/ctc.hpp"
#include "brst/errors.hpp"
#include "brst/ops.hpp"

namespace brst {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
  if (peak_lr <= 0.0) throw ConfigError("peak_lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0, 1)");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 1) throw InputError("lr_at: step must be >= 1");
  const double warm = static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double decay = std::sqrt(static_cast<double>(cfg.warmup_steps) / static_cast<double>(step));
  return cfg.peak_lr * std::min(warm, decay);
}

Tensor joint_loss(const ModelParams& params, const Array& features, const TokenSequence& target, double lambda, double label_smoothing, LossBreakdown* breakdown) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("joint_loss: lambda must be in [0, 1]");
  EncodeResult enc = encode(params, features);
  Tensor ctc_lp = ctc_head(params, enc.output);
  Tensor ctc_nll = ctc_loss(ctc_lp, target, params.vocab.blank_id);

  TokenSequence prefix = {params.vocab.sos_id};
  prefix.insert(prefix.end(), target.begin(), target.end());
  DecodeForwardResult dec = decoder_forward_all(params, enc.output, prefix);
  std::vector<int> shifted(target.begin(), target.end());
  shifted.push_back(params.vocab.eos_id);
  Tensor att_nll = pick_nll(dec.logprobs, shifted, label_smoothing);

  if (breakdown) {
    breakdown->ctc = ctc_nll.value()[0];
    breakdown->att = att_nll.value()[0];
    breakdown->joint = lambda * breakdown->ctc + (1.0 - lambda) * breakdown->att;
  }
  return add(scale(ctc_nll, lambda), scale(att_nll, 1.0 - lambda));
}

OptimizerState OptimizerState::init(const ModelParams& params) {
  OptimizerState opt;
  for (const auto& [name, tensor] : params.named_params()) {
    opt.m.push_back(Array::zeros(tensor.shape()));
    opt.v.push_back(Array::zeros(tensor.shape()));
  }
  return opt;
}

double apply_adam_update(ModelParams& params, OptimizerState& opt, double lr, double grad_clip) {
  constexpr double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;
  auto named = params.named_params();
  if (opt.m.size() != named.size()) throw ConfigError("optimizer state does not match the parameter set");

  double sq_sum = 0.0;
  for (auto& [name, tensor] : named) {
    Tensor t = tensor;
    const Array& g = t.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) sq_sum += g[i] * g[i];
  }
  const double grad_norm = std::sqrt(sq_sum);
  // exact no-op scale when already within the clip
  const double clip_scale = grad_norm > grad_clip ? grad_clip / grad_norm : 1.0;

  opt.step += 1;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
  for (size_t pi = 0; pi < named.size(); ++pi) {
    Tensor t = named[pi].second;
    Array& value = t.value();
    const Array& g = t.ensure_grad();
    Array& m = opt.m[pi];
    Array& v = opt.v[pi];
    for (int64_t i = 0; i < value.numel(); ++i) {
      const double gi = clip_scale * g[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return grad_norm;
}

StepMetrics train_step(ModelParams& params, OptimizerState& opt, const std::vector<TrainExample>& batch, const TrainConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw InputError("train_step: empty batch");

  params.zero_grads();
  StepMetrics metrics;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const TrainExample& ex : batch) {
    Tape tape;
    TapeScope scope(tape);
    LossBreakdown parts;
    Tensor loss = scale(joint_loss(params, ex.features, ex.target, cfg.lambda, cfg.label_smoothing, &parts), inv_batch);
    if (!std::isfinite(loss.value()[0])) {
      throw NumericError("training aborted: non-finite loss at step " + std::to_string(opt.step + 1));
    }
    tape.backward(loss);
    metrics.loss += parts.joint * inv_batch;
    metrics.ctc_loss += parts.ctc * inv_batch;
    metrics.att_loss += parts.att * inv_batch;
  }
  metrics.lr = lr_at(opt.step + 1, cfg);
  metrics.grad_norm = apply_adam_update(params, opt, metrics.lr, cfg.grad_clip);
  metrics.step = opt.step;
  return metrics;
}

// ---- optimizer sidecar ----

void save_optimizer_state(const OptimizerState& opt, const ModelParams& params, const std::string& path) {
  json meta;
  meta["kind"] = "optimizer";
  meta["step"] = opt.step;
  meta["epoch"] = opt.epoch;
  meta["batch_in_epoch"] = opt.batch_in_epoch;
  std::vector<std::pair<std::string, const Array*>> entries;
  auto named = params.named_params();
  for (size_t i = 0; i < named.size(); ++i) {
    entries.emplace_back("adam.m." + named[i].first, &opt.m[i]);
    entries.emplace_back("adam.v." + named[i].first, &opt.v[i]);
  }
  write_container(path, meta.dump(), entries);
}

OptimizerState load_optimizer_state(const ModelParams& params, const std::string& path) {
  RawContainer c = read_container(path);
  json meta = json::parse(c.meta_json);
  OptimizerState opt;
  opt.step = meta.at("step").get<int64_t>();
  opt.epoch = meta.at("epoch").get<int64_t>();
  opt.batch_in_epoch = meta.at("batch_in_epoch").get<int64_t>();
  for (const auto& [name, tensor] : params.named_params()) {
    auto mit = c.arrays.find("adam.m." + name);
    auto vit = c.arrays.find("adam.v." + name);
    if (mit == c.arrays.end() || vit == c.arrays.end()) {
      throw CheckpointError("optimizer sidecar missing moments for " + name);
    }
    opt.m.push_back(mit->second);
    opt.v.push_back(vit->second);
  }
  return opt;
}

// ---- training loop ----

namespace {

struct BatchPlan {
  std::vector<std::vector<size_t>> batches;  // indices into the corpus
};

// Length-bucketed batches (stable across epochs); only the batch order
// is reshuffled per epoch.
BatchPlan plan_batches(const std::vector<int64_t>& lengths, const std::vector<std::string>& ids, int batch_size) {
  std::vector<size_t> order(lengths.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (lengths[a] != lengths[b]) return lengths[a] < lengths[b];
    return ids[a] < ids[b];
  });
  BatchPlan plan;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

std::vector<size_t> epoch_batch_order(size_t num_batches, uint64_t seed, int64_t epoch) {
  std::vector<size_t> order(num_batches);
  for (size_t i = 0; i < num_batches; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5351ULL + static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

}  // namespace

TrainResult run_training(const std::vector<ManifestEntry>& corpus, const TrainConfig& cfg, const ModelConfig& model_cfg, const Vocabulary& vocab, const std::string& out_dir, const std::string& resume_checkpoint) {
  cfg.validate();
  model_cfg.validate();
  if (corpus.empty()) throw ConfigError("run_training: empty corpus");
  for (const auto& e : corpus) {
    if (e.transcript.empty()) throw ConfigError("run_training: utterance " + e.utt_id + " has no transcript");
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  // CMVN-normalized features stay cached; SpecAugment is re-drawn per epoch.
  std::vector<TrainExample> base;
  base.reserve(corpus.size());
  std::vector<int64_t> lengths;
  std::vector<std::string> ids;
  for (const auto& e : corpus) {
    TrainExample ex;
    ex.features = apply_cmvn(load_features(e));
    ex.target = tokens_to_ids(vocab, e.transcript);
    lengths.push_back(ex.features.rows());
    ids.push_back(e.utt_id);
    base.push_back(std::move(ex));
  }

  ModelParams params = resume_checkpoint.empty() ? build_model(model_cfg, vocab, cfg.seed) : load_checkpoint(resume_checkpoint);
  OptimizerState opt = resume_checkpoint.empty() ? OptimizerState::init(params) : load_optimizer_state(params, resume_checkpoint + ".opt");

  const BatchPlan plan = plan_batches(lengths, ids, cfg.batch_size);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  const bool append = !resume_checkpoint.empty() && fs::exists(metrics_path) && fs::file_size(metrics_path) > 0;
  std::ofstream metrics(metrics_path, append ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics: " + metrics_path);
  if (!append) metrics << "step,loss,ctc_loss,att_loss,lr,grad_norm\n";

  write_config_file((fs::path(out_dir) / "resolved_config.txt").string(), model_cfg, cfg);

  auto checkpoint_path = [&](int64_t step) {
    return (fs::path(out_dir) / ("checkpoint_step" + std::to_string(step) + ".brst")).string();
  };
  auto save_state = [&](const std::string& path) {
    save_checkpoint(params, path);
    save_optimizer_state(opt, params, path + ".opt");
  };

  TrainResult result;
  result.metrics_csv = metrics_path;
  std::vector<size_t> order = epoch_batch_order(plan.batches.size(), cfg.seed, opt.epoch);
  while (opt.step < cfg.max_steps) {
    if (opt.batch_in_epoch >= static_cast<int64_t>(order.size())) {
      opt.epoch += 1;
      opt.batch_in_epoch = 0;
      order = epoch_batch_order(plan.batches.size(), cfg.seed, opt.epoch);
    }
    const std::vector<size_t>& batch_ids = plan.batches[order[static_cast<size_t>(opt.batch_in_epoch)]];
    std::vector<TrainExample> batch;
    batch.reserve(batch_ids.size());
    for (size_t idx : batch_ids) {
      TrainExample ex = base[idx];
      if (cfg.use_spec_augment) {
        SpecAugmentConfig aug = cfg.spec_augment;
        aug.rng_seed = mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(opt.epoch)), static_cast<uint64_t>(idx));
        ex.features = spec_augment(ex.features, aug);
      }
      batch.push_back(std::move(ex));
    }
    StepMetrics m = train_step(params, opt, batch, cfg);
    opt.batch_in_epoch += 1;
    metrics << m.step << ',' << m.loss << ',' << m.ctc_loss << ',' << m.att_loss << ',' << m.lr << ',' << m.grad_norm << '\n';
    if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0 && m.step < cfg.max_steps) {
      save_state(checkpoint_path(m.step));
    }
  }
  metrics.flush();

  result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.brst").string();
  save_state(result.final_checkpoint);
  result.steps_run = opt.step;
  return result;
}

// ---- flat key=value config ----

ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  ConfigMap kv;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + path);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_config_file(const std::string& path, const ModelConfig& m, const TrainConfig& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file: " + path);
  out << "model.d_model = " << m.d_model << '\n';
  out << "model.heads = " << m.heads << '\n';
  out << "model.ff_dim = " << m.ff_dim << '\n';
  out << "model.num_enc_blocks = " << m.num_enc_blocks << '\n';
  out << "model.num_dec_blocks = " << m.num_dec_blocks << '\n';
  out << "model.enc_repeats = " << m.enc_repeats << '\n';
  out << "model.dec_repeats = " << m.dec_repeats << '\n';
  out << "model.adapters_encoder = " << (m.adapters_encoder ? 1 : 0) << '\n';
  out << "model.adapters_decoder = " << (m.adapters_decoder ? 1 : 0) << '\n';
  out << "model.vocab_size = " << m.vocab_size << '\n';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", t.lambda);
  out << "train.lambda = " << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", t.peak_lr);
  out << "train.peak_lr = " << buf << '\n';
  out << "train.warmup_steps = " << t.warmup_steps << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", t.grad_clip);
  out << "train.grad_clip = " << buf << '\n';
  out << "train.batch_size = " << t.batch_size << '\n';
  out << "train.max_steps = " << t.max_steps << '\n';
  std::snprintf(buf, sizeof(buf), "%.17g", t.label_smoothing);
  out << "train.label_smoothing = " << buf << '\n';
  out << "train.seed = " << t.seed << '\n';
  out << "train.checkpoint_every = " << t.checkpoint_every << '\n';
  out << "train.use_spec_augment = " << (t.use_spec_augment ? 1 : 0) << '\n';
  out << "train.spec_augment.num_freq_masks = " << t.spec_augment.num_freq_masks << '\n';
  out << "train.spec_augment.max_freq_bins = " << t.spec_augment.max_freq_bins << '\n';
  out << "train.spec_augment.num_time_masks = " << t.spec_augment.num_time_masks << '\n';
  out << "train.spec_augment.max_time_frames = " << t.spec_augment.max_time_frames << '\n';
}

void apply_config(const ConfigMap& kv, ModelConfig& m, TrainConfig& t) {
  auto geti = [&](const std::string& key, int& target) {
    auto it = kv.find(key);
    if (it != kv.end()) target = std::stoi(it->second);
  };
  auto geti64 = [&](const std::string& key, int64_t& target) {
    auto it = kv.find(key);
    if (it != kv.end()) target = std::stoll(it->second);
  };
  auto getu64 = [&](const std::string& key, uint64_t& target) {
    auto it = kv.find(key);
    if (it != kv.end()) target = std::stoull(it->second);
  };
  auto getd = [&](const std::string& key, double& target) {
    auto it = kv.find(key);
    if (it != kv.end()) target = std::stod(it->second);
  };
  auto getb = [&](const std::string& key, bool& target) {
    auto it = kv.find(key);
    if (it != kv.end()) target = it->second != "0" && it->second != "false";
  };
  for (const auto& [key, value] : kv) {
    if (key.rfind("model.", 0) != 0 && key.rfind("train.", 0) != 0) {
      throw ConfigError("unknown config key: " + key);
    }
  }
  geti("model.d_model", m.d_model);
  geti("model.heads", m.heads);
  geti("model.ff_dim", m.ff_dim);
  geti("model.num_enc_blocks", m.num_enc_blocks);
  geti("model.num_dec_blocks", m.num_dec_blocks);
  geti("model.enc_repeats", m.enc_repeats);
  geti("model.dec_repeats", m.dec_repeats);
  getb("model.adapters_encoder", m.adapters_encoder);
  getb("model.adapters_decoder", m.adapters_decoder);
  geti("model.vocab_size", m.vocab_size);
  getd("train.lambda", t.lambda);
  getd("train.peak_lr", t.peak_lr);
  geti64("train.warmup_steps", t.warmup_steps);
  getd("train.grad_clip", t.grad_clip);
  geti("train.batch_size", t.batch_size);
  geti64("train.max_steps", t.max_steps);
  getd("train.label_smoothing", t.label_smoothing);
  getu64("train.seed", t.seed);
  geti64("train.checkpoint_every", t.checkpoint_every);
  getb("train.use_spec_augment", t.use_spec_augment);
  geti("train.spec_augment.num_freq_masks", t.spec_augment.num_freq_masks);
  geti("train.spec_augment.max_freq_bins", t.spec_augment.max_freq_bins);
  geti("train.spec_augment.num_time_masks", t.spec_augment.num_time_masks);
  geti("train.spec_augment.max_time_frames", t.spec_augment.max_time_frames);
}

}  // namespace brst
