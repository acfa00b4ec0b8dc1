#pragma once

#include <string>

#include "brst/hypothesis.hpp"
#include "brst/model.hpp"

namespace brst {

// Length-synchronous beam over the autoregressive decoder. Scores are raw
// sums of per-step log-probabilities (no length normalization). `max_len`
// caps the emitted tokens, eos included; if nothing finishes in time the
// best partials come back flagged truncated.
NBestList attention_beam_search(const ModelParams& params, const Array& encoder_out, int beam_size, int max_len);

// Teacher-forces every CTC hypothesis through the attention decoder and
// returns the argmax of weight*log_p_ctc + (1-weight)*log_p_att.
Hypothesis attention_rescore(const ModelParams& params, const Array& encoder_out, const NBestList& ctc_nbest, double weight);

// log p_att(tokens | encoder_out) under teacher forcing, eos included.
double attention_score(const ModelParams& params, const Array& encoder_out, const TokenSequence& tokens);

struct EditStats {
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  int64_t ref_len = 0;
  double cer = 0.0;
  bool degenerate = false;  // empty reference

  int64_t distance() const { return substitutions + insertions + deletions; }
};

// Levenshtein alignment with unit costs; cer = (S+I+D)/ref_len.
EditStats compute_cer(const TokenSequence& reference, const TokenSequence& hypothesis);

}  // namespace brst
