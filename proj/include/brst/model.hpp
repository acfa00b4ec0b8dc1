#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "brst/array.hpp"
#include "brst/hypothesis.hpp"
#include "brst/tape.hpp"

namespace brst {

// Block-stacking vs block-reusing layout. The distinct-block counts and
// the repetition counts are mutually exclusive depth knobs: with more
// than one distinct block each is applied once, with a single block it
// is applied `*_repeats` times.
struct ModelConfig {
  int d_model = 256;
  int heads = 4;
  int ff_dim = 2048;
  int num_enc_blocks = 1;  // distinct encoder blocks
  int num_dec_blocks = 1;  // distinct decoder blocks
  int enc_repeats = 12;    // encoder applications per pass
  int dec_repeats = 6;     // decoder applications per pass
  bool adapters_encoder = false;
  bool adapters_decoder = false;
  int vocab_size = 0;
  int subsample_factor = 4;  // fixed by the two stride-2 convolutions

  int encoder_depth() const { return num_enc_blocks == 1 ? enc_repeats : num_enc_blocks; }
  int decoder_depth() const { return num_dec_blocks == 1 ? dec_repeats : num_dec_blocks; }
  void validate() const;
};

// Token inventory shared by the CTC and attention heads. The blank lives
// in the same vocabulary as the linguistic units so both heads score the
// same id space.
struct Vocabulary {
  std::vector<std::string> tokens;
  int blank_id = 0;
  int sos_id = 1;
  int eos_id = 2;
  std::unordered_map<std::string, int> index;

  static Vocabulary build(const std::vector<std::string>& corpus_tokens);
  int size() const { return static_cast<int>(tokens.size()); }
  int require(const std::string& token) const;
  void rebuild_index();
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};
struct LayerNormParams {
  Tensor gain, bias;
};
struct EncoderBlockParams {
  AttentionParams attn;
  FeedForwardParams ff;
  LayerNormParams ln1, ln2;
};
struct DecoderBlockParams {
  AttentionParams self_attn, cross_attn;
  FeedForwardParams ff;
  LayerNormParams ln1, ln2, ln3;
};
// Per-repetition linear + ReLU, composed after the shared block.
struct AdapterParams {
  Tensor weight, bias;
};
struct FrontendParams {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, proj_w, proj_b;
};

struct ModelParams {
  ModelConfig cfg;
  Vocabulary vocab;
  FrontendParams frontend;
  std::vector<EncoderBlockParams> enc_blocks;
  std::vector<AdapterParams> enc_adapters;
  std::vector<DecoderBlockParams> dec_blocks;
  std::vector<AdapterParams> dec_adapters;
  Tensor token_embedding;  // |U| x d
  Tensor ctc_w, ctc_b;
  Tensor att_w, att_b;

  // Fixed, documented ordering; checkpoint layout and the optimizer
  // both follow it.
  std::vector<std::pair<std::string, Tensor>> named_params() const;
  void zero_grads() const;
};

struct EncodeResult {
  Tensor output;  // (L, d)
  // ("enc-0", input to the first application), then "enc-i" and, when
  // adapters are present, "enc-i-after-ADM" in depth order.
  std::vector<std::pair<std::string, Array>> captures;
};

struct DecodeForwardResult {
  Tensor logprobs;  // (prefix_len, |U|), row r conditions on tokens < r
  std::vector<std::pair<std::string, Array>> captures;  // "dec-*" sites
};

ModelParams build_model(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);

// Single block application, exposed so tests can replay the reuse path
// manually.
Tensor apply_encoder_block(const EncoderBlockParams& block, const Tensor& x, int heads);
Tensor apply_adapter(const AdapterParams& adapter, const Tensor& x);

EncodeResult encode(const ModelParams& params, const Array& features, bool capture = false);

// Teacher-forced pass over a full prefix that must begin with sos.
DecodeForwardResult decoder_forward_all(const ModelParams& params, const Tensor& encoder_out, const TokenSequence& prefix_with_sos, bool capture = false);

// Log-probabilities over U for the next token after the prefix.
Array decoder_forward(const ModelParams& params, const Array& encoder_out, const TokenSequence& prefix_with_sos);

// (L, |U|) per-frame log-probabilities from the linear CTC head.
Tensor ctc_head(const ModelParams& params, const Tensor& encoder_out);

// Sinusoidal table, (len, d).
Array positional_encoding(int64_t len, int64_t d);

struct ParamReport {
  int64_t frontend = 0;
  int64_t encoder_blocks = 0;
  int64_t encoder_adapters = 0;
  int64_t decoder_blocks = 0;
  int64_t decoder_adapters = 0;
  int64_t token_embedding = 0;
  int64_t ctc_head = 0;
  int64_t attention_head = 0;
  int64_t total() const {
    return frontend + encoder_blocks + encoder_adapters + decoder_blocks + decoder_adapters + token_embedding + ctc_head + attention_head;
  }
};

ParamReport count_params(const ModelParams& params);
// Same accounting from the configuration alone (no allocation).
ParamReport count_params_config(const ModelConfig& cfg);

}  // namespace brst
