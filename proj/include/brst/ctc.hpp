#pragma once

#include "brst/array.hpp"
#include "brst/hypothesis.hpp"
#include "brst/tape.hpp"

namespace brst {

// Forward/backward lattice over the blank-interleaved expanded label
// sequence. Both alpha and beta include the emission at their own frame,
// so the terminal alpha log-sum and the initial beta log-sum both equal
// the total log-likelihood.
struct CtcTrellis {
  Array alpha;  // (L, 2*target_len+1), log domain, -inf sentinel
  Array beta;
  double log_likelihood = 0.0;

  double alpha_terminal_logsum() const;
  double beta_initial_logsum() const;
};

struct CtcResult {
  double loss = 0.0;  // negative log-likelihood
  CtcTrellis trellis;
  Array grad_logprobs;  // d(loss)/d(logprobs), same shape as input
};

// Blank-interleaved expansion: (blank, c1, blank, c2, ..., blank).
std::vector<int> ctc_expand_labels(const TokenSequence& target, int blank);

// Fewest frames any alignment of `target` can occupy.
int64_t ctc_min_frames(const TokenSequence& target);

// Full forward-backward pass. logprobs is (L x |U|) of per-frame
// log-probabilities. Throws InfeasibleTargetError when no alignment fits.
CtcResult ctc_forward_backward(const Array& logprobs, const TokenSequence& target, int blank);

double ctc_loss_value(const Array& logprobs, const TokenSequence& target, int blank);

// Differentiable scalar node recording the hand-derived adjoint.
Tensor ctc_loss(const Tensor& logprobs, const TokenSequence& target, int blank);

// Per-frame argmax (ties to the lowest token index), collapse repeats,
// drop blanks.
TokenSequence ctc_greedy(const Array& logprobs, int blank);

// Prefix beam search keeping separate blank-/non-blank-ending mass per
// prefix. Exact marginalization when beam_size exceeds the number of
// reachable prefixes. Scores are total log-probabilities.
NBestList ctc_prefix_beam(const Array& logprobs, int blank, int beam_size);

}  // namespace brst
