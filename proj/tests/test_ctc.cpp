#include <doctest.h>

#include <cmath>
#include <map>

#include "brst/ctc.hpp"
#include "brst/errors.hpp"
#include "brst/ops.hpp"
#include "brst/rng.hpp"

using namespace brst;

namespace {

// Collapse a frame path: merge repeats, then drop blanks.
TokenSequence collapse_path(const std::vector<int>& path, int blank) {
  TokenSequence out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

// Exhaustive marginalization over all |U|^L frame paths.
std::map<TokenSequence, double> enumerate_label_probs(const Array& logprobs, int blank) {
  const int64_t L = logprobs.rows(), vocab = logprobs.cols();
  std::map<TokenSequence, double> probs;
  std::vector<int> path(static_cast<size_t>(L), 0);
  while (true) {
    double p = 0.0;
    for (int64_t t = 0; t < L; ++t) p += logprobs.at(t, path[static_cast<size_t>(t)]);
    TokenSequence label = collapse_path(path, blank);
    auto [it, inserted] = probs.emplace(label, std::exp(p));
    if (!inserted) it->second += std::exp(p);
    // next path in odometer order
    int64_t pos = L - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == vocab - 1) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<size_t>(pos)];
  }
  return probs;
}

Array random_logprob_matrix(Rng& rng, int64_t frames, int64_t vocab) {
  Array logits = Array::uniform({frames, vocab}, rng, -2, 2);
  return softmax_log(Tensor::constant(logits), 1).value();
}

}  // namespace

TEST_CASE("ctc_loss single frame, single label") {
  Rng rng(1);
  Array lp = random_logprob_matrix(rng, 1, 3);
  const double loss = ctc_loss_value(lp, {1}, 0);
  CHECK(loss == doctest::Approx(-lp.at(0, 1)).epsilon(1e-12));
}

TEST_CASE("ctc_loss empty target is the all-blank path") {
  Rng rng(2);
  Array lp = random_logprob_matrix(rng, 4, 3);
  double expect = 0.0;
  for (int64_t t = 0; t < 4; ++t) expect -= lp.at(t, 0);
  CHECK(ctc_loss_value(lp, {}, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ctc_loss matches exhaustive path enumeration") {
  Rng rng(42);
  int tested = 0;
  while (tested < 60) {
    const int64_t L = rng.uniform_int(1, 6);
    const int64_t vocab = rng.uniform_int(2, 4);
    const int64_t target_len = rng.uniform_int(0, 3);
    TokenSequence target;
    for (int64_t i = 0; i < target_len; ++i) target.push_back(static_cast<int>(rng.uniform_int(1, vocab - 1)));
    if (L < ctc_min_frames(target)) continue;
    Array lp = random_logprob_matrix(rng, L, vocab);
    auto table = enumerate_label_probs(lp, 0);
    auto it = table.find(target);
    REQUIRE(it != table.end());
    const double oracle_loss = -std::log(it->second);
    CHECK(std::abs(ctc_loss_value(lp, target, 0) - oracle_loss) <= 1e-9);
    ++tested;
  }
}

TEST_CASE("alpha and beta log-sums agree with the likelihood") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t L = rng.uniform_int(2, 8);
    Array lp = random_logprob_matrix(rng, L, 4);
    TokenSequence target = {1, 2};
    auto res = ctc_forward_backward(lp, target, 0);
    CHECK(std::abs(res.trellis.alpha_terminal_logsum() - res.trellis.beta_initial_logsum()) <= 1e-9);
    CHECK(std::abs(res.trellis.alpha_terminal_logsum() + res.loss) <= 1e-9);
  }
}

TEST_CASE("ctc_loss gradient matches finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const int64_t L = rng.uniform_int(3, 6);
    Tensor logits = Tensor::leaf(Array::uniform({L, 4}, rng, -2, 2));
    TokenSequence target = {1, 3};
    auto f = [&]() { return ctc_loss(softmax_log(logits, 1), target, 0); };
    CHECK(finite_diff_check(f, {logits}) <= 1e-5);
  }
}

TEST_CASE("appended certain-blank frame leaves the loss unchanged") {
  Rng rng(23);
  Array lp = random_logprob_matrix(rng, 5, 3);
  TokenSequence target = {1, 2};
  const double base = ctc_loss_value(lp, target, 0);

  Array extended({6, 3});
  for (int64_t i = 0; i < lp.numel(); ++i) extended[i] = lp[i];
  extended.at(5, 0) = 0.0;  // log p(blank) = 0
  extended.at(5, 1) = -1e30;
  extended.at(5, 2) = -1e30;
  CHECK(std::abs(ctc_loss_value(extended, target, 0) - base) <= 1e-9);
}

TEST_CASE("infeasible targets are rejected") {
  Rng rng(3);
  Array lp = random_logprob_matrix(rng, 2, 3);
  CHECK_THROWS_AS(ctc_loss_value(lp, {1, 1}, 0), InfeasibleTargetError);  // needs 3 frames
  CHECK_THROWS_AS(ctc_loss_value(lp, {1, 0}, 0), InputError);             // blank in target
}

TEST_CASE("ctc_greedy collapse rules") {
  // argmax path [a, a, blank, b] -> [a, b]
  Array lp({4, 3},
           {-3, -0.1, -3,
            -3, -0.1, -3,
            -0.1, -3, -3,
            -3, -3, -0.1});
  CHECK(ctc_greedy(lp, 0) == TokenSequence{1, 2});

  Array blanks = Array::full({3, 3}, -3.0);
  for (int64_t t = 0; t < 3; ++t) blanks.at(t, 0) = -0.1;
  CHECK(ctc_greedy(blanks, 0).empty());

  // [a, blank, a] -> [a, a]
  Array sep({3, 3},
            {-3, -0.1, -3,
             -0.1, -3, -3,
             -3, -0.1, -3});
  CHECK(ctc_greedy(sep, 0) == TokenSequence{1, 1});

  // tie broken toward the lowest index
  Array tie = Array::full({1, 3}, -1.0);
  CHECK(ctc_greedy(tie, 0).empty());  // blank (index 0) wins the tie
}

TEST_CASE("prefix beam of width one equals greedy on peaked inputs") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t L = rng.uniform_int(2, 6);
    Array lp({L, 3});
    for (int64_t t = 0; t < L; ++t) {
      const int64_t hot = rng.uniform_int(0, 2);
      for (int64_t k = 0; k < 3; ++k) lp.at(t, k) = (k == hot) ? std::log(0.98) : std::log(0.01);
    }
    NBestList nb = ctc_prefix_beam(lp, 0, 1);
    REQUIRE(!nb.empty());
    CHECK(nb.best().tokens == ctc_greedy(lp, 0));
  }
}

TEST_CASE("prefix beam with unbounded beam is exact marginalization") {
  Rng rng(57);
  for (int trial = 0; trial < 15; ++trial) {
    const int64_t L = rng.uniform_int(1, 5);
    const int64_t vocab = rng.uniform_int(2, 3);
    Array lp = random_logprob_matrix(rng, L, vocab);
    auto table = enumerate_label_probs(lp, 0);

    TokenSequence best_label;
    double best_p = -1.0;
    for (const auto& [label, p] : table) {
      if (p > best_p || (p == best_p && lex_less(label, best_label))) {
        best_p = p;
        best_label = label;
      }
    }

    NBestList nb = ctc_prefix_beam(lp, 0, 100000);
    REQUIRE(!nb.empty());
    CHECK(nb.best().tokens == best_label);
    CHECK(std::abs(std::exp(nb.best().score) - best_p) <= 1e-9);
    // every reported prefix probability matches the enumeration
    for (const auto& h : nb.hypotheses) {
      auto it = table.find(h.tokens);
      REQUIRE(it != table.end());
      CHECK(std::abs(std::exp(h.score) - it->second) <= 1e-9);
    }
  }
}

TEST_CASE("uniform single-frame distribution splits mass between blank and token") {
  Array lp({1, 2}, {std::log(0.5), std::log(0.5)});
  NBestList nb = ctc_prefix_beam(lp, 0, 10);
  REQUIRE(nb.hypotheses.size() == 2);
  for (const auto& h : nb.hypotheses) {
    CHECK(std::exp(h.score) == doctest::Approx(0.5).epsilon(1e-12));
  }
}
