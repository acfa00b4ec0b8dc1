#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "brst/analysis.hpp"
#include "brst/errors.hpp"
#include "brst/ops.hpp"

using namespace brst;

namespace {

namespace fs = std::filesystem;

// Gram-Schmidt on a random square matrix
Array random_orthogonal(int64_t n, uint64_t seed) {
  Rng rng(seed);
  Array q({n, n});
  for (int64_t r = 0; r < n; ++r) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.gauss();
    for (int64_t prev = 0; prev < r; ++prev) {
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += v[static_cast<size_t>(j)] * q.at(prev, j);
      for (int64_t j = 0; j < n; ++j) v[static_cast<size_t>(j)] -= dot * q.at(prev, j);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < n; ++j) q.at(r, j) = v[static_cast<size_t>(j)] / norm;
  }
  return q;
}

// direct long-double evaluation of the centered formula
long double cka_oracle(const Array& x, const Array& y) {
  const int64_t n = x.rows(), dx = x.cols(), dy = y.cols();
  std::vector<long double> xc(static_cast<size_t>(n * dx)), yc(static_cast<size_t>(n * dy));
  for (int64_t j = 0; j < dx; ++j) {
    long double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= n;
    for (int64_t i = 0; i < n; ++i) xc[static_cast<size_t>(i * dx + j)] = x.at(i, j) - mean;
  }
  for (int64_t j = 0; j < dy; ++j) {
    long double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += y.at(i, j);
    mean /= n;
    for (int64_t i = 0; i < n; ++i) yc[static_cast<size_t>(i * dy + j)] = y.at(i, j) - mean;
  }
  auto fro2 = [n](const std::vector<long double>& a, int64_t da, const std::vector<long double>& b, int64_t db) {
    long double total = 0;
    for (int64_t p = 0; p < da; ++p) {
      for (int64_t q = 0; q < db; ++q) {
        long double cell = 0;
        for (int64_t i = 0; i < n; ++i) cell += a[static_cast<size_t>(i * da + p)] * b[static_cast<size_t>(i * db + q)];
        total += cell * cell;
      }
    }
    return total;
  };
  const long double xy = fro2(yc, dy, xc, dx);
  const long double xx = fro2(xc, dx, xc, dx);
  const long double yy = fro2(yc, dy, yc, dy);
  return xy / (sqrtl(xx) * sqrtl(yy));
}

ActivationDump toy_dump(const ModelParams& p, const std::vector<ManifestEntry>& entries, int64_t max_rows = 0) {
  return dump_activations(p, entries, max_rows, 1, "m");
}

struct ToyWorld {
  fs::path dir;
  std::vector<ManifestEntry> entries;
  Vocabulary vocab;

  explicit ToyWorld(const std::string& name, int utts = 4) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    ToyCorpusSpec spec;
    spec.num_utterances = utts;
    spec.vocab_size = 5;
    spec.seed = 21;
    const std::string manifest = generate_toy_corpus(spec, dir.string());
    entries = read_manifest(manifest);
    vocab = vocab_from_manifest(entries);
  }
  ~ToyWorld() { fs::remove_all(dir); }

  ModelParams model(uint64_t seed, bool adapters = false, int s1 = 4) const {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ff_dim = 24;
    cfg.enc_repeats = s1;
    cfg.dec_repeats = 2;
    cfg.adapters_encoder = adapters;
    cfg.vocab_size = vocab.size();
    return build_model(cfg, vocab, seed);
  }
};

}  // namespace

TEST_CASE("linear_cka self-similarity, symmetry, and range") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Array x = Array::uniform({12, 5}, rng, -2, 2);
    Array y = Array::uniform({12, 7}, rng, -2, 2);
    CHECK(std::abs(linear_cka(x, x) - 1.0) <= 1e-12);
    const double xy = linear_cka(x, y);
    CHECK(xy >= 0.0);
    CHECK(xy <= 1.0 + 1e-9);
    CHECK(std::abs(xy - linear_cka(y, x)) <= 1e-12);
  }
}

TEST_CASE("linear_cka is invariant to orthogonal maps and isotropic scale") {
  Rng rng(9);
  Array x = Array::uniform({20, 6}, rng, -2, 2);
  Array y = Array::uniform({20, 6}, rng, -2, 2);
  Array q = random_orthogonal(6, 33);
  const double base = linear_cka(x, y);

  Array yq = matmul_value(y, q);
  CHECK(std::abs(linear_cka(x, yq) - base) <= 1e-9);

  Array ys = y;
  for (int64_t i = 0; i < ys.numel(); ++i) ys[i] *= 3.7;
  CHECK(std::abs(linear_cka(x, ys) - base) <= 1e-9);

  Array yqs = yq;
  for (int64_t i = 0; i < yqs.numel(); ++i) yqs[i] *= 0.21;
  CHECK(std::abs(linear_cka(x, yqs) - base) <= 1e-9);
}

TEST_CASE("linear_cka matches the extended-precision oracle on 4x2 integers") {
  Array x({4, 2}, {1, 2, 2, 1, 3, 4, 4, 3});
  Array y({4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
  const double got = linear_cka(x, y);
  const double expect = static_cast<double>(cka_oracle(x, y));
  CHECK(std::abs(got - expect) <= 1e-12);
  // frozen value from the oracle
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("linear_cka rejects degenerate input") {
  Array x = Array::full({6, 3}, 2.0);  // all rows identical
  Rng rng(2);
  Array y = Array::uniform({6, 3}, rng, -1, 1);
  CHECK_THROWS_AS(linear_cka(x, y), DegenerateInputError);
  CHECK_THROWS_AS(linear_cka(y, Array::uniform({5, 3}, rng, -1, 1)), InputError);
}

TEST_CASE("dump_activations counts sites per configuration") {
  ToyWorld world("brst_dump_test");

  ModelParams br = world.model(3, false);
  ActivationDump dump = toy_dump(br, world.entries);
  CHECK(dump.encoder_site_labels().size() == 4);  // S1=4 block sites
  CHECK(dump.decoder_site_labels().size() == 2);
  CHECK(dump.encoder_input.rows() == dump.sites.front().second.rows());

  ModelParams bra = world.model(3, true);
  ActivationDump dump_adm = toy_dump(bra, world.entries);
  CHECK(dump_adm.encoder_site_labels().size() == 8);  // block + after-ADM

  // max_rows larger than available: no subsampling
  ActivationDump capped = toy_dump(br, world.entries, 1 << 20);
  CHECK(capped.encoder_input.rows() == dump.encoder_input.rows());

  // subsampling caps rows
  ActivationDump small = toy_dump(br, world.entries, 7);
  CHECK(small.encoder_input.rows() == 7);
  CHECK(small.sites.front().second.rows() == 7);
}

TEST_CASE("horizontal similarity of a dump with itself is all ones") {
  ToyWorld world("brst_horiz_test");
  ModelParams br = world.model(4);
  ActivationDump dump = toy_dump(br, world.entries);
  CKAReport report = horizontal_similarity(dump, dump);
  REQUIRE(!report.pairs.empty());
  for (const auto& pair : report.pairs) CHECK(pair.cka == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity adapters produce zero push-away on non-negative data") {
  // hand-built dump: after-ADM equals relu(I x + 0) = x for x >= 0
  Rng rng(7);
  ActivationDump a, b;
  a.model_tag = "base";
  b.model_tag = "bra";
  for (int depth = 1; depth <= 3; ++depth) {
    Array base_site = Array::uniform({30, 6}, rng, 0.1, 2.0);
    Array b_site = Array::uniform({30, 6}, rng, 0.1, 2.0);
    Array after = b_site;  // identity adapter on non-negative activations
    a.sites.emplace_back("enc-" + std::to_string(depth), base_site);
    b.sites.emplace_back("enc-" + std::to_string(depth), b_site);
    b.sites.emplace_back("enc-" + std::to_string(depth) + "-after-ADM", after);
  }
  CKAReport report = horizontal_similarity(a, b);
  REQUIRE(report.push_away.size() == 3);
  for (const auto& pa : report.push_away) CHECK(pa.value <= 1e-12);
}

TEST_CASE("independently seeded models are similar but not identical") {
  ToyWorld world("brst_pair_test");
  ModelParams m1 = world.model(5);
  ModelParams m2 = world.model(6);
  ActivationDump d1 = toy_dump(m1, world.entries);
  ActivationDump d2 = toy_dump(m2, world.entries);
  CKAReport report = horizontal_similarity(d1, d2);
  for (const auto& pair : report.pairs) {
    CHECK(pair.cka < 1.0);
    CHECK(pair.cka >= 0.0);
  }

  // depth mismatch is an input error
  ModelParams deeper = world.model(5, false, 3);
  ActivationDump d3 = toy_dump(deeper, world.entries);
  CHECK_THROWS_AS(horizontal_similarity(d1, d3), InputError);
}

TEST_CASE("vertical similarity flags linear sites") {
  Rng rng(13);
  ActivationDump dump;
  dump.encoder_input = Array::uniform({40, 6}, rng, -2, 2);
  dump.decoder_input = Array::uniform({10, 6}, rng, -2, 2);

  // site 1: identity
  dump.sites.emplace_back("enc-1", dump.encoder_input);
  // site 2: fixed random orthogonal map of site 1
  Array q = random_orthogonal(6, 41);
  dump.sites.emplace_back("enc-2", matmul_value(dump.encoder_input, q));
  // site 3: elementwise relu of zero-mean data
  Array relu_site = dump.sites.back().second;
  for (int64_t i = 0; i < relu_site.numel(); ++i) relu_site[i] = std::max(0.0, relu_site[i]);
  dump.sites.emplace_back("enc-3", relu_site);
  // decoder chain: identity site
  dump.sites.emplace_back("dec-1", dump.decoder_input);

  CKAReport report = vertical_similarity(dump);
  REQUIRE(report.pairs.size() == 4);
  CHECK(std::abs(report.pairs[0].cka - 1.0) <= 1e-12);  // identity
  CHECK(std::abs(report.pairs[1].cka - 1.0) <= 1e-9);   // orthogonal map
  CHECK(report.pairs[2].cka < 1.0);                     // relu nonlinearity
  CHECK(std::abs(report.pairs[3].cka - 1.0) <= 1e-12);

  auto flags = linearity_flags(report, 0.95);
  CHECK(flags[0].second);
  CHECK(flags[1].second);
  CHECK(flags[3].second);

  // threshold 1.0 only flags exact ones
  auto strict = linearity_flags(report, 1.0);
  CHECK(strict[0].second);
  CHECK(!strict[2].second);

  CHECK_THROWS_AS(linearity_flags(report, 0.0), InputError);
}

TEST_CASE("reports are stable under utterance reordering without subsampling") {
  ToyWorld world("brst_perm_test");
  ModelParams m = world.model(8);
  std::vector<ManifestEntry> reversed(world.entries.rbegin(), world.entries.rend());
  ActivationDump d1 = toy_dump(m, world.entries);
  ActivationDump d2 = toy_dump(m, reversed);
  CKAReport v1 = vertical_similarity(d1);
  CKAReport v2 = vertical_similarity(d2);
  REQUIRE(v1.pairs.size() == v2.pairs.size());
  for (size_t i = 0; i < v1.pairs.size(); ++i) {
    CHECK(v1.pairs[i].cka == doctest::Approx(v2.pairs[i].cka).epsilon(1e-9));
  }
}

TEST_CASE("csv and svg reports land on disk") {
  ToyWorld world("brst_report_test");
  ModelParams m = world.model(10, true);
  ActivationDump dump = toy_dump(m, world.entries);
  CKAReport vertical = vertical_similarity(dump);
  CKAReport horizontal = horizontal_similarity(dump, dump);

  const auto dir = world.dir;
  write_cka_csv(vertical, (dir / "vertical.csv").string());
  write_push_away_csv(horizontal, (dir / "push.csv").string());
  write_cka_svg(vertical, (dir / "vertical.svg").string(), "vertical");

  std::ifstream csv((dir / "vertical.csv").string());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "site_a,site_b,cka");
  std::ifstream svg((dir / "vertical.svg").string());
  std::string first;
  std::getline(svg, first);
  CHECK(first.find("<svg") != std::string::npos);
}
