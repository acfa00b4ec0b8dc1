#pragma once

#include <optional>
#include <vector>

namespace brst {

using TokenSequence = std::vector<int>;

// Lexicographic order on token id sequences, used for every tie-break so
// n-best lists are reproducible across platforms.
inline bool lex_less(const TokenSequence& a, const TokenSequence& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct Hypothesis {
  TokenSequence tokens;
  std::optional<double> log_prob_ctc;
  std::optional<double> log_prob_att;
  double score = 0.0;
  bool truncated = false;
};

struct NBestList {
  std::vector<Hypothesis> hypotheses;  // sorted by score descending
  int beam_size = 0;

  bool empty() const { return hypotheses.empty(); }
  const Hypothesis& best() const { return hypotheses.front(); }
};

// score desc, ties lexicographic
inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return lex_less(a.tokens, b.tokens);
}

}  // namespace brst
