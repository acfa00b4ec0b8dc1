#include "brst/decode.hpp"

#include <algorithm>
#include <cmath>

#include "brst/errors.hpp"

namespace brst {

NBestList attention_beam_search(const ModelParams& params, const Array& encoder_out, int beam_size, int max_len) {
  if (beam_size < 1) throw InputError("attention_beam_search: beam_size must be >= 1");
  if (max_len < 1) throw InputError("attention_beam_search: max_len must be >= 1");
  const Vocabulary& vocab = params.vocab;

  struct Partial {
    TokenSequence tokens;
    double logp = 0.0;
  };
  auto partial_better = [](const Partial& a, const Partial& b) {
    if (a.logp != b.logp) return a.logp > b.logp;
    return lex_less(a.tokens, b.tokens);
  };

  std::vector<Partial> active = {{{}, 0.0}};
  std::vector<Hypothesis> completed;

  for (int step = 0; step < max_len && !active.empty(); ++step) {
    // eos candidates compete with continuations for the beam slots, so a
    // width-1 beam reproduces greedy decoding exactly
    struct Candidate {
      Partial partial;
      bool is_eos = false;
    };
    std::vector<Candidate> candidates;
    for (const Partial& hyp : active) {
      TokenSequence prefix = {vocab.sos_id};
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      const Array row = decoder_forward(params, encoder_out, prefix);
      for (int k = 0; k < vocab.size(); ++k) {
        if (k == vocab.blank_id || k == vocab.sos_id) continue;  // never emitted
        Candidate c;
        c.partial.tokens = hyp.tokens;
        c.partial.logp = hyp.logp + row[k];
        if (k == vocab.eos_id) {
          c.is_eos = true;
        } else {
          c.partial.tokens.push_back(k);
        }
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) { return partial_better(a.partial, b.partial); });
    if (static_cast<int>(candidates.size()) > beam_size) candidates.resize(static_cast<size_t>(beam_size));

    active.clear();
    for (Candidate& c : candidates) {
      if (c.is_eos) {
        Hypothesis done;
        done.tokens = std::move(c.partial.tokens);
        done.log_prob_att = c.partial.logp;
        done.score = c.partial.logp;
        completed.push_back(std::move(done));
      } else {
        active.push_back(std::move(c.partial));
      }
    }
  }
  std::sort(completed.begin(), completed.end(), hyp_better);

  NBestList out;
  out.beam_size = beam_size;
  if (!completed.empty()) {
    out.hypotheses = std::move(completed);
  } else {
    // nothing reached eos: return flagged partials
    for (const Partial& hyp : active) {
      Hypothesis h;
      h.tokens = hyp.tokens;
      h.log_prob_att = hyp.logp;
      h.score = hyp.logp;
      h.truncated = true;
      out.hypotheses.push_back(std::move(h));
    }
    std::sort(out.hypotheses.begin(), out.hypotheses.end(), hyp_better);
  }
  if (static_cast<int>(out.hypotheses.size()) > beam_size) out.hypotheses.resize(static_cast<size_t>(beam_size));
  return out;
}

double attention_score(const ModelParams& params, const Array& encoder_out, const TokenSequence& tokens) {
  TokenSequence prefix = {params.vocab.sos_id};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  DecodeForwardResult res = decoder_forward_all(params, Tensor::constant(encoder_out), prefix, false);
  const Array& lp = res.logprobs.value();
  double total = 0.0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    total += lp.at(static_cast<int64_t>(i), tokens[i]);
  }
  total += lp.at(lp.rows() - 1, params.vocab.eos_id);
  return total;
}

Hypothesis attention_rescore(const ModelParams& params, const Array& encoder_out, const NBestList& ctc_nbest, double weight) {
  if (ctc_nbest.empty()) throw InputError("attention_rescore: empty n-best list");
  if (weight < 0.0 || weight > 1.0) throw InputError("attention_rescore: weight must be in [0, 1]");

  Hypothesis best;
  bool have_best = false;
  for (const Hypothesis& h : ctc_nbest.hypotheses) {
    if (!h.log_prob_ctc.has_value()) throw InputError("attention_rescore: hypothesis lacks a CTC score");
    Hypothesis scored = h;
    scored.log_prob_att = attention_score(params, encoder_out, h.tokens);
    scored.score = weight * (*scored.log_prob_ctc) + (1.0 - weight) * (*scored.log_prob_att);
    if (!have_best || hyp_better(scored, best)) {
      best = std::move(scored);
      have_best = true;
    }
  }
  return best;
}

EditStats compute_cer(const TokenSequence& reference, const TokenSequence& hypothesis) {
  const int64_t n = static_cast<int64_t>(reference.size());
  const int64_t m = static_cast<int64_t>(hypothesis.size());
  EditStats stats;
  stats.ref_len = n;
  if (n == 0) {
    stats.insertions = m;
    stats.cer = static_cast<double>(m);  // insertions over a floor of 1
    stats.degenerate = true;
    return stats;
  }

  // dp over (ref prefix, hyp prefix); backtrace prefers match/substitution,
  // then deletion, then insertion
  std::vector<std::vector<int64_t>> dp(static_cast<size_t>(n + 1), std::vector<int64_t>(static_cast<size_t>(m + 1), 0));
  for (int64_t i = 0; i <= n; ++i) dp[static_cast<size_t>(i)][0] = i;
  for (int64_t j = 0; j <= m; ++j) dp[0][static_cast<size_t>(j)] = j;
  for (int64_t i = 1; i <= n; ++i) {
    for (int64_t j = 1; j <= m; ++j) {
      const int64_t sub = dp[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] + (reference[static_cast<size_t>(i - 1)] == hypothesis[static_cast<size_t>(j - 1)] ? 0 : 1);
      const int64_t del = dp[static_cast<size_t>(i - 1)][static_cast<size_t>(j)] + 1;
      const int64_t ins = dp[static_cast<size_t>(i)][static_cast<size_t>(j - 1)] + 1;
      dp[static_cast<size_t>(i)][static_cast<size_t>(j)] = std::min({sub, del, ins});
    }
  }
  int64_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = reference[static_cast<size_t>(i - 1)] == hypothesis[static_cast<size_t>(j - 1)];
      const int64_t sub = dp[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] + (match ? 0 : 1);
      if (dp[static_cast<size_t>(i)][static_cast<size_t>(j)] == sub) {
        if (!match) ++stats.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && dp[static_cast<size_t>(i)][static_cast<size_t>(j)] == dp[static_cast<size_t>(i - 1)][static_cast<size_t>(j)] + 1) {
      ++stats.deletions;
      --i;
      continue;
    }
    ++stats.insertions;
    --j;
  }
  stats.cer = static_cast<double>(stats.distance()) / static_cast<double>(n);
  return stats;
}

}  // namespace brst
