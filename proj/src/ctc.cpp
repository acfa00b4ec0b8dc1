#include "brst/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "brst/errors.hpp"
#include "brst/ops.hpp"

namespace brst {

static constexpr double kLogZero = -std::numeric_limits<double>::infinity();

static double logaddexp(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double CtcTrellis::alpha_terminal_logsum() const {
  const int64_t L = alpha.rows(), S = alpha.cols();
  double v = alpha.at(L - 1, S - 1);
  if (S >= 2) v = logaddexp(v, alpha.at(L - 1, S - 2));
  return v;
}

double CtcTrellis::beta_initial_logsum() const {
  const int64_t S = beta.cols();
  double v = beta.at(0, 0);
  if (S >= 2) v = logaddexp(v, beta.at(0, 1));
  return v;
}

std::vector<int> ctc_expand_labels(const TokenSequence& target, int blank) {
  std::vector<int> expanded;
  expanded.reserve(2 * target.size() + 1);
  expanded.push_back(blank);
  for (int c : target) {
    expanded.push_back(c);
    expanded.push_back(blank);
  }
  return expanded;
}

int64_t ctc_min_frames(const TokenSequence& target) {
  int64_t frames = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++frames;  // duplicates need a separating blank
  }
  return frames;
}

CtcResult ctc_forward_backward(const Array& logprobs, const TokenSequence& target, int blank) {
  if (logprobs.ndim() != 2) throw ShapeError("ctc: logprobs must be (L, |U|), got " + logprobs.shape_str());
  const int64_t L = logprobs.rows(), vocab = logprobs.cols();
  if (blank < 0 || blank >= vocab) throw InputError("ctc: blank index out of range");
  for (int c : target) {
    if (c < 0 || c >= vocab) throw InputError("ctc: target token id " + std::to_string(c) + " out of range");
    if (c == blank) throw InputError("ctc: target contains the blank symbol");
  }
  if (L < ctc_min_frames(target)) {
    throw InfeasibleTargetError("ctc: target of length " + std::to_string(target.size()) + " needs at least " + std::to_string(ctc_min_frames(target)) + " frames, got " + std::to_string(L));
  }

  const std::vector<int> lab = ctc_expand_labels(target, blank);
  const int64_t S = static_cast<int64_t>(lab.size());
  auto y = [&](int64_t t, int64_t s) { return logprobs.at(t, lab[static_cast<size_t>(s)]); };
  // allow a skip from s-2 when the skipped state is a blank between
  // distinct characters
  auto can_skip = [&](int64_t s) {
    return s >= 2 && lab[static_cast<size_t>(s)] != blank && lab[static_cast<size_t>(s)] != lab[static_cast<size_t>(s - 2)];
  };

  Array alpha = Array::full({L, S}, kLogZero);
  alpha.at(0, 0) = y(0, 0);
  if (S > 1) alpha.at(0, 1) = y(0, 1);
  for (int64_t t = 1; t < L; ++t) {
    for (int64_t s = 0; s < S; ++s) {
      double acc = alpha.at(t - 1, s);
      if (s >= 1) acc = logaddexp(acc, alpha.at(t - 1, s - 1));
      if (can_skip(s)) acc = logaddexp(acc, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = acc == kLogZero ? kLogZero : acc + y(t, s);
    }
  }

  Array beta = Array::full({L, S}, kLogZero);
  beta.at(L - 1, S - 1) = y(L - 1, S - 1);
  if (S > 1) beta.at(L - 1, S - 2) = y(L - 1, S - 2);
  for (int64_t t = L - 2; t >= 0; --t) {
    for (int64_t s = S - 1; s >= 0; --s) {
      double acc = beta.at(t + 1, s);
      if (s + 1 < S) acc = logaddexp(acc, beta.at(t + 1, s + 1));
      if (s + 2 < S && lab[static_cast<size_t>(s + 2)] != blank && lab[static_cast<size_t>(s + 2)] != lab[static_cast<size_t>(s)]) {
        acc = logaddexp(acc, beta.at(t + 1, s + 2));
      }
      beta.at(t, s) = acc == kLogZero ? kLogZero : acc + y(t, s);
    }
  }

  CtcResult result;
  result.trellis.alpha = std::move(alpha);
  result.trellis.beta = std::move(beta);
  const double log_like = result.trellis.alpha_terminal_logsum();
  if (log_like == kLogZero) {
    throw InfeasibleTargetError("ctc: no alignment has nonzero probability");
  }
  result.trellis.log_likelihood = log_like;
  result.loss = -log_like;

  // d(-log p)/d y[t,k] = -sum_{s: lab[s]=k} exp(alpha[t,s] + beta[t,s] - y[t,s] - log p)
  result.grad_logprobs = Array::zeros(logprobs.shape());
  for (int64_t t = 0; t < L; ++t) {
    for (int64_t s = 0; s < S; ++s) {
      const double a = result.trellis.alpha.at(t, s);
      const double b = result.trellis.beta.at(t, s);
      if (a == kLogZero || b == kLogZero) continue;
      const double posterior = std::exp(a + b - y(t, s) - log_like);
      result.grad_logprobs.at(t, lab[static_cast<size_t>(s)]) -= posterior;
    }
  }
  return result;
}

double ctc_loss_value(const Array& logprobs, const TokenSequence& target, int blank) {
  return ctc_forward_backward(logprobs, target, blank).loss;
}

Tensor ctc_loss(const Tensor& logprobs, const TokenSequence& target, int blank) {
  CtcResult res = ctc_forward_backward(logprobs.value(), target, blank);
  auto grad = std::make_shared<Array>(std::move(res.grad_logprobs));
  return detail::make_op_node(Array({1}, {res.loss}), "ctc_loss", {logprobs}, [grad](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Array& g = p.ensure_grad();
    const double go = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += go * (*grad)[i];
  });
}

TokenSequence ctc_greedy(const Array& logprobs, int blank) {
  if (logprobs.ndim() != 2) throw ShapeError("ctc_greedy: logprobs must be (L, |U|)");
  const int64_t L = logprobs.rows(), vocab = logprobs.cols();
  TokenSequence out;
  int prev = -1;
  for (int64_t t = 0; t < L; ++t) {
    int best = 0;
    for (int64_t k = 1; k < vocab; ++k) {
      if (logprobs.at(t, k) > logprobs.at(t, best)) best = static_cast<int>(k);
    }
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

NBestList ctc_prefix_beam(const Array& logprobs, int blank, int beam_size) {
  if (logprobs.ndim() != 2) throw ShapeError("ctc_prefix_beam: logprobs must be (L, |U|)");
  if (beam_size < 1) throw InputError("ctc_prefix_beam: beam_size must be >= 1");
  const int64_t L = logprobs.rows(), vocab = logprobs.cols();

  struct Mass {
    double blank_end = kLogZero;     // ends in blank (or is empty)
    double nonblank_end = kLogZero;  // ends in its final non-blank token
    double total() const { return logaddexp(blank_end, nonblank_end); }
  };
  // std::map keys keep prefixes in lexicographic order, which makes the
  // per-frame iteration order deterministic.
  using Beam = std::map<TokenSequence, Mass>;

  Beam beam;
  beam[{}] = Mass{0.0, kLogZero};  // empty prefix, probability 1

  for (int64_t t = 0; t < L; ++t) {
    Beam next;
    auto bump_blank = [&next](const TokenSequence& key, double mass) {
      if (mass == kLogZero) return;
      Mass& m = next[key];
      m.blank_end = logaddexp(m.blank_end, mass);
    };
    auto bump_nonblank = [&next](const TokenSequence& key, double mass) {
      if (mass == kLogZero) return;
      Mass& m = next[key];
      m.nonblank_end = logaddexp(m.nonblank_end, mass);
    };
    for (const auto& [prefix, mass] : beam) {
      const double total = mass.total();
      for (int64_t k = 0; k < vocab; ++k) {
        const double yk = logprobs.at(t, static_cast<int64_t>(k));
        if (k == blank) {
          bump_blank(prefix, total + yk);
        } else if (!prefix.empty() && prefix.back() == static_cast<int>(k)) {
          // same symbol: staying extends the run, coming from a blank
          // ending starts a new occurrence
          bump_nonblank(prefix, mass.nonblank_end + yk);
          TokenSequence extended = prefix;
          extended.push_back(static_cast<int>(k));
          bump_nonblank(extended, mass.blank_end + yk);
        } else {
          TokenSequence extended = prefix;
          extended.push_back(static_cast<int>(k));
          bump_nonblank(extended, total + yk);
        }
      }
    }
    if (static_cast<int>(next.size()) > beam_size) {
      std::vector<std::pair<TokenSequence, Mass>> entries(next.begin(), next.end());
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        const double ta = a.second.total(), tb = b.second.total();
        if (ta != tb) return ta > tb;
        return lex_less(a.first, b.first);
      });
      entries.resize(static_cast<size_t>(beam_size));
      next = Beam(entries.begin(), entries.end());
    }
    beam = std::move(next);
  }

  NBestList out;
  out.beam_size = beam_size;
  for (const auto& [prefix, mass] : beam) {
    Hypothesis h;
    h.tokens = prefix;
    h.log_prob_ctc = mass.total();
    h.score = mass.total();
    out.hypotheses.push_back(std::move(h));
  }
  std::sort(out.hypotheses.begin(), out.hypotheses.end(), hyp_better);
  if (static_cast<int>(out.hypotheses.size()) > beam_size) out.hypotheses.resize(static_cast<size_t>(beam_size));
  return out;
}

}  // namespace brst
