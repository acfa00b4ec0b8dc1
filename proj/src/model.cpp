#include "brst/model.hpp"

#include <algorithm>
#include <cmath>

#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/ops.hpp"

namespace brst {

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || ff_dim <= 0) throw ConfigError("model dims must be positive");
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (num_enc_blocks < 1 || num_dec_blocks < 1 || enc_repeats < 1 || dec_repeats < 1) {
    throw ConfigError("block and repetition counts must be >= 1");
  }
  if (num_enc_blocks > 1 && enc_repeats != 1) {
    throw ConfigError("a stacked encoder (num_enc_blocks > 1) applies each block once; enc_repeats must be 1");
  }
  if (num_dec_blocks > 1 && dec_repeats != 1) {
    throw ConfigError("a stacked decoder (num_dec_blocks > 1) applies each block once; dec_repeats must be 1");
  }
  if (adapters_encoder && num_enc_blocks != 1) throw ConfigError("encoder adapters require block reuse (num_enc_blocks == 1)");
  if (adapters_decoder && num_dec_blocks != 1) throw ConfigError("decoder adapters require block reuse (num_dec_blocks == 1)");
  if (vocab_size < 4) throw ConfigError("vocab_size must cover blank/sos/eos plus at least one token");
  if (subsample_factor != 4) throw ConfigError("only the x4 convolutional frontend is supported");
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_tokens) {
  Vocabulary v;
  v.tokens = {"<blk>", "<sos>", "<eos>"};
  std::vector<std::string> uniq = corpus_tokens;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  for (const auto& t : uniq) {
    if (t == "<blk>" || t == "<sos>" || t == "<eos>") throw InputError("reserved token in corpus: " + t);
    v.tokens.push_back(t);
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index.clear();
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (!index.emplace(tokens[i], static_cast<int>(i)).second) {
      throw InputError("duplicate vocabulary token: " + tokens[i]);
    }
  }
}

int Vocabulary::require(const std::string& token) const {
  auto it = index.find(token);
  if (it == index.end()) throw InputError("token not in vocabulary: " + token);
  return it->second;
}

// ---- construction ----

namespace {

// frequency extent after the two stride-2 convolutions
int64_t frontend_freq_out() {
  const int64_t f1 = (kNumMelBins + 1) / 2;
  return (f1 + 1) / 2;
}

Tensor init_matrix(Rng& rng, int64_t in_dim, int64_t out_dim) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  return Tensor::leaf(Array::uniform({in_dim, out_dim}, rng, -bound, bound));
}

Tensor init_bias(int64_t n) { return Tensor::leaf(Array::zeros({n})); }

// conv weights are (C_out, C_in*9); fan-in is C_in*9
Tensor init_conv(Rng& rng, int64_t c_out, int64_t c_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * 9));
  return Tensor::leaf(Array::uniform({c_out, c_in * 9}, rng, -bound, bound));
}

AttentionParams init_attention(Rng& rng, int64_t d) {
  AttentionParams ap;
  ap.wq = init_matrix(rng, d, d);
  ap.bq = init_bias(d);
  ap.wk = init_matrix(rng, d, d);
  ap.bk = init_bias(d);
  ap.wv = init_matrix(rng, d, d);
  ap.bv = init_bias(d);
  ap.wo = init_matrix(rng, d, d);
  ap.bo = init_bias(d);
  return ap;
}

FeedForwardParams init_ff(Rng& rng, int64_t d, int64_t ff) {
  FeedForwardParams fp;
  fp.w1 = init_matrix(rng, d, ff);
  fp.b1 = init_bias(ff);
  fp.w2 = init_matrix(rng, ff, d);
  fp.b2 = init_bias(d);
  return fp;
}

LayerNormParams init_ln(int64_t d) {
  LayerNormParams lp;
  lp.gain = Tensor::leaf(Array::full({d}, 1.0));
  lp.bias = init_bias(d);
  return lp;
}

std::vector<uint8_t> causal_mask(int64_t n) {
  std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j <= i; ++j) mask[static_cast<size_t>(i * n + j)] = 1;
  }
  return mask;
}

Tensor multi_head_attention(const AttentionParams& ap, const Tensor& queries, const Tensor& memory, int heads, const std::vector<uint8_t>* mask) {
  const int64_t d = ap.wq.value().rows();
  const int64_t dk = d / heads;
  Tensor q = add_row_bias(matmul(queries, ap.wq), ap.bq);
  Tensor k = add_row_bias(matmul(memory, ap.wk), ap.bk);
  Tensor v = add_row_bias(matmul(memory, ap.wv), ap.bv);
  std::vector<Tensor> heads_out;
  heads_out.reserve(static_cast<size_t>(heads));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, dk);
    Tensor kh = slice_cols(k, h * dk, dk);
    Tensor vh = slice_cols(v, h * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    Tensor probs = mask ? masked_softmax_rows(scores, *mask) : softmax_rows(scores);
    heads_out.push_back(matmul(probs, vh));
  }
  Tensor merged = concat_cols(heads_out);
  return add_row_bias(matmul(merged, ap.wo), ap.bo);
}

Tensor feed_forward(const FeedForwardParams& fp, const Tensor& x) {
  Tensor hidden = relu(add_row_bias(matmul(x, fp.w1), fp.b1));
  return add_row_bias(matmul(hidden, fp.w2), fp.b2);
}

void push_named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const AttentionParams& ap) {
  out.emplace_back(prefix + ".q.weight", ap.wq);
  out.emplace_back(prefix + ".q.bias", ap.bq);
  out.emplace_back(prefix + ".k.weight", ap.wk);
  out.emplace_back(prefix + ".k.bias", ap.bk);
  out.emplace_back(prefix + ".v.weight", ap.wv);
  out.emplace_back(prefix + ".v.bias", ap.bv);
  out.emplace_back(prefix + ".o.weight", ap.wo);
  out.emplace_back(prefix + ".o.bias", ap.bo);
}

void push_named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const FeedForwardParams& fp) {
  out.emplace_back(prefix + ".w1", fp.w1);
  out.emplace_back(prefix + ".b1", fp.b1);
  out.emplace_back(prefix + ".w2", fp.w2);
  out.emplace_back(prefix + ".b2", fp.b2);
}

void push_named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const LayerNormParams& lp) {
  out.emplace_back(prefix + ".gain", lp.gain);
  out.emplace_back(prefix + ".bias", lp.bias);
}

}  // namespace

ModelParams build_model(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed) {
  cfg.validate();
  if (vocab.size() != cfg.vocab_size) {
    throw ConfigError("vocab size " + std::to_string(vocab.size()) + " does not match config vocab_size " + std::to_string(cfg.vocab_size));
  }
  Rng rng(seed);
  ModelParams p;
  p.cfg = cfg;
  p.vocab = vocab;
  const int64_t d = cfg.d_model;
  const int64_t v = cfg.vocab_size;

  p.frontend.conv1_w = init_conv(rng, d, 1);
  p.frontend.conv1_b = init_bias(d);
  p.frontend.conv2_w = init_conv(rng, d, d);
  p.frontend.conv2_b = init_bias(d);
  p.frontend.proj_w = init_matrix(rng, d * frontend_freq_out(), d);
  p.frontend.proj_b = init_bias(d);

  for (int i = 0; i < cfg.num_enc_blocks; ++i) {
    EncoderBlockParams b;
    b.attn = init_attention(rng, d);
    b.ff = init_ff(rng, d, cfg.ff_dim);
    b.ln1 = init_ln(d);
    b.ln2 = init_ln(d);
    p.enc_blocks.push_back(std::move(b));
  }
  if (cfg.adapters_encoder) {
    for (int i = 0; i < cfg.enc_repeats; ++i) {
      AdapterParams a;
      a.weight = init_matrix(rng, d, d);
      a.bias = init_bias(d);
      p.enc_adapters.push_back(std::move(a));
    }
  }
  for (int i = 0; i < cfg.num_dec_blocks; ++i) {
    DecoderBlockParams b;
    b.self_attn = init_attention(rng, d);
    b.cross_attn = init_attention(rng, d);
    b.ff = init_ff(rng, d, cfg.ff_dim);
    b.ln1 = init_ln(d);
    b.ln2 = init_ln(d);
    b.ln3 = init_ln(d);
    p.dec_blocks.push_back(std::move(b));
  }
  if (cfg.adapters_decoder) {
    for (int i = 0; i < cfg.dec_repeats; ++i) {
      AdapterParams a;
      a.weight = init_matrix(rng, d, d);
      a.bias = init_bias(d);
      p.dec_adapters.push_back(std::move(a));
    }
  }
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    p.token_embedding = Tensor::leaf(Array::uniform({v, d}, rng, -bound, bound));
  }
  p.ctc_w = init_matrix(rng, d, v);
  p.ctc_b = init_bias(v);
  p.att_w = init_matrix(rng, d, v);
  p.att_b = init_bias(v);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("frontend.conv1.weight", frontend.conv1_w);
  out.emplace_back("frontend.conv1.bias", frontend.conv1_b);
  out.emplace_back("frontend.conv2.weight", frontend.conv2_w);
  out.emplace_back("frontend.conv2.bias", frontend.conv2_b);
  out.emplace_back("frontend.proj.weight", frontend.proj_w);
  out.emplace_back("frontend.proj.bias", frontend.proj_b);
  for (size_t i = 0; i < enc_blocks.size(); ++i) {
    const std::string prefix = "encoder.block" + std::to_string(i);
    push_named(out, prefix + ".attn", enc_blocks[i].attn);
    push_named(out, prefix + ".ff", enc_blocks[i].ff);
    push_named(out, prefix + ".ln1", enc_blocks[i].ln1);
    push_named(out, prefix + ".ln2", enc_blocks[i].ln2);
  }
  for (size_t i = 0; i < enc_adapters.size(); ++i) {
    const std::string prefix = "encoder.adapter" + std::to_string(i);
    out.emplace_back(prefix + ".weight", enc_adapters[i].weight);
    out.emplace_back(prefix + ".bias", enc_adapters[i].bias);
  }
  for (size_t i = 0; i < dec_blocks.size(); ++i) {
    const std::string prefix = "decoder.block" + std::to_string(i);
    push_named(out, prefix + ".self_attn", dec_blocks[i].self_attn);
    push_named(out, prefix + ".cross_attn", dec_blocks[i].cross_attn);
    push_named(out, prefix + ".ff", dec_blocks[i].ff);
    push_named(out, prefix + ".ln1", dec_blocks[i].ln1);
    push_named(out, prefix + ".ln2", dec_blocks[i].ln2);
    push_named(out, prefix + ".ln3", dec_blocks[i].ln3);
  }
  for (size_t i = 0; i < dec_adapters.size(); ++i) {
    const std::string prefix = "decoder.adapter" + std::to_string(i);
    out.emplace_back(prefix + ".weight", dec_adapters[i].weight);
    out.emplace_back(prefix + ".bias", dec_adapters[i].bias);
  }
  out.emplace_back("embedding.token", token_embedding);
  out.emplace_back("head.ctc.weight", ctc_w);
  out.emplace_back("head.ctc.bias", ctc_b);
  out.emplace_back("head.att.weight", att_w);
  out.emplace_back("head.att.bias", att_b);
  return out;
}

void ModelParams::zero_grads() const {
  for (auto& [name, tensor] : named_params()) {
    Tensor t = tensor;
    t.zero_grad();
  }
}

Array positional_encoding(int64_t len, int64_t d) {
  Array pe({len, d});
  for (int64_t pos = 0; pos < len; ++pos) {
    for (int64_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor apply_encoder_block(const EncoderBlockParams& block, const Tensor& x, int heads) {
  Tensor attn_out = multi_head_attention(block.attn, x, x, heads, nullptr);
  Tensor h = layer_norm(add(x, attn_out), block.ln1.gain, block.ln1.bias);
  Tensor ff_out = feed_forward(block.ff, h);
  return layer_norm(add(h, ff_out), block.ln2.gain, block.ln2.bias);
}

Tensor apply_adapter(const AdapterParams& adapter, const Tensor& x) {
  return relu(add_row_bias(matmul(x, adapter.weight), adapter.bias));
}

static Tensor apply_decoder_block(const DecoderBlockParams& block, const Tensor& y, const Tensor& memory, int heads, const std::vector<uint8_t>& mask) {
  Tensor sa = multi_head_attention(block.self_attn, y, y, heads, &mask);
  Tensor h = layer_norm(add(y, sa), block.ln1.gain, block.ln1.bias);
  Tensor ca = multi_head_attention(block.cross_attn, h, memory, heads, nullptr);
  h = layer_norm(add(h, ca), block.ln2.gain, block.ln2.bias);
  Tensor ff_out = feed_forward(block.ff, h);
  return layer_norm(add(h, ff_out), block.ln3.gain, block.ln3.bias);
}

// Two stride-2 convolutions with ReLU, flatten channels, project to
// d_model, scale by sqrt(d), add the sinusoidal table.
static Tensor frontend_forward(const ModelParams& p, const Array& features) {
  if (features.ndim() != 2 || features.cols() != kNumMelBins) {
    throw ShapeError("encode: features must be (T, " + std::to_string(kNumMelBins) + "), got " + features.shape_str());
  }
  if (!features.all_finite()) throw NumericError("encode: non-finite feature input");
  const int64_t d = p.cfg.d_model;
  Tensor x = Tensor::constant(Array({1, features.rows(), features.cols()}, features.vec()));
  Tensor c1 = relu(conv2d_s2(x, p.frontend.conv1_w, p.frontend.conv1_b));
  Tensor c2 = relu(conv2d_s2(c1, p.frontend.conv2_w, p.frontend.conv2_b));
  Tensor rows = channels_to_rows(c2);
  Tensor h = add_row_bias(matmul(rows, p.frontend.proj_w), p.frontend.proj_b);
  h = scale(h, std::sqrt(static_cast<double>(d)));
  return add(h, Tensor::constant(positional_encoding(h.value().rows(), d)));
}

EncodeResult encode(const ModelParams& params, const Array& features, bool capture) {
  EncodeResult result;
  Tensor h = frontend_forward(params, features);
  if (capture) result.captures.emplace_back("enc-0", h.value());
  const int depth = params.cfg.encoder_depth();
  for (int rep = 1; rep <= depth; ++rep) {
    const EncoderBlockParams& block = params.enc_blocks[params.cfg.num_enc_blocks == 1 ? 0 : static_cast<size_t>(rep - 1)];
    h = apply_encoder_block(block, h, params.cfg.heads);
    if (!h.value().all_finite()) {
      throw NumericError("encoder repetition " + std::to_string(rep) + " produced non-finite values");
    }
    if (capture) result.captures.emplace_back("enc-" + std::to_string(rep), h.value());
    if (params.cfg.adapters_encoder) {
      h = apply_adapter(params.enc_adapters[static_cast<size_t>(rep - 1)], h);
      if (!h.value().all_finite()) {
        throw NumericError("encoder adapter " + std::to_string(rep) + " produced non-finite values");
      }
      if (capture) result.captures.emplace_back("enc-" + std::to_string(rep) + "-after-ADM", h.value());
    }
  }
  result.output = h;
  return result;
}

DecodeForwardResult decoder_forward_all(const ModelParams& params, const Tensor& encoder_out, const TokenSequence& prefix_with_sos, bool capture) {
  if (prefix_with_sos.empty() || prefix_with_sos.front() != params.vocab.sos_id) {
    throw InputError("decoder_forward: prefix must begin with sos");
  }
  const int64_t d = params.cfg.d_model;
  Tensor y = embedding_lookup(params.token_embedding, prefix_with_sos);
  y = scale(y, std::sqrt(static_cast<double>(d)));
  y = add(y, Tensor::constant(positional_encoding(y.value().rows(), d)));

  DecodeForwardResult result;
  if (capture) result.captures.emplace_back("dec-0", y.value());
  const std::vector<uint8_t> mask = causal_mask(y.value().rows());
  const int depth = params.cfg.decoder_depth();
  for (int rep = 1; rep <= depth; ++rep) {
    const DecoderBlockParams& block = params.dec_blocks[params.cfg.num_dec_blocks == 1 ? 0 : static_cast<size_t>(rep - 1)];
    y = apply_decoder_block(block, y, encoder_out, params.cfg.heads, mask);
    if (!y.value().all_finite()) {
      throw NumericError("decoder repetition " + std::to_string(rep) + " produced non-finite values");
    }
    if (capture) result.captures.emplace_back("dec-" + std::to_string(rep), y.value());
    if (params.cfg.adapters_decoder) {
      y = apply_adapter(params.dec_adapters[static_cast<size_t>(rep - 1)], y);
      if (!y.value().all_finite()) {
        throw NumericError("decoder adapter " + std::to_string(rep) + " produced non-finite values");
      }
      if (capture) result.captures.emplace_back("dec-" + std::to_string(rep) + "-after-ADM", y.value());
    }
  }
  Tensor logits = add_row_bias(matmul(y, params.att_w), params.att_b);
  result.logprobs = softmax_log(logits, 1);
  return result;
}

Array decoder_forward(const ModelParams& params, const Array& encoder_out, const TokenSequence& prefix_with_sos) {
  DecodeForwardResult res = decoder_forward_all(params, Tensor::constant(encoder_out), prefix_with_sos, false);
  const Array& lp = res.logprobs.value();
  const int64_t last = lp.rows() - 1;
  Array row({lp.cols()});
  for (int64_t j = 0; j < lp.cols(); ++j) row[j] = lp.at(last, j);
  return row;
}

Tensor ctc_head(const ModelParams& params, const Tensor& encoder_out) {
  if (!encoder_out.value().all_finite()) throw NumericError("ctc_head: non-finite encoder output");
  Tensor logits = add_row_bias(matmul(encoder_out, params.ctc_w), params.ctc_b);
  return softmax_log(logits, 1);
}

ParamReport count_params(const ModelParams& params) {
  ParamReport r;
  for (const auto& [name, tensor] : params.named_params()) {
    const int64_t n = tensor.value().numel();
    if (name.rfind("frontend.", 0) == 0) {
      r.frontend += n;
    } else if (name.rfind("encoder.block", 0) == 0) {
      r.encoder_blocks += n;
    } else if (name.rfind("encoder.adapter", 0) == 0) {
      r.encoder_adapters += n;
    } else if (name.rfind("decoder.block", 0) == 0) {
      r.decoder_blocks += n;
    } else if (name.rfind("decoder.adapter", 0) == 0) {
      r.decoder_adapters += n;
    } else if (name.rfind("embedding.", 0) == 0) {
      r.token_embedding += n;
    } else if (name.rfind("head.ctc", 0) == 0) {
      r.ctc_head += n;
    } else if (name.rfind("head.att", 0) == 0) {
      r.attention_head += n;
    } else {
      throw Error("count_params: unclassified component " + name);
    }
  }
  return r;
}

ParamReport count_params_config(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model, ff = cfg.ff_dim, v = cfg.vocab_size;
  ParamReport r;
  r.frontend = (d * 9 + d) + (d * d * 9 + d) + (d * frontend_freq_out() * d + d);
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffp = (d * ff + ff) + (ff * d + d);
  const int64_t ln = 2 * d;
  r.encoder_blocks = cfg.num_enc_blocks * (attn + ffp + 2 * ln);
  r.decoder_blocks = cfg.num_dec_blocks * (2 * attn + ffp + 3 * ln);
  if (cfg.adapters_encoder) r.encoder_adapters = static_cast<int64_t>(cfg.enc_repeats) * (d * d + d);
  if (cfg.adapters_decoder) r.decoder_adapters = static_cast<int64_t>(cfg.dec_repeats) * (d * d + d);
  r.token_embedding = v * d;
  r.ctc_head = d * v + v;
  r.attention_head = d * v + v;
  return r;
}

}  // namespace brst
