#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/rng.hpp"

using namespace brst;

namespace {

Waveform tone(double freq, double seconds, double amplitude = 8000.0) {
  Waveform w;
  const int64_t n = static_cast<int64_t>(seconds * 16000);
  w.samples.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    w.samples[static_cast<size_t>(i)] = amplitude * std::sin(2.0 * M_PI * freq * i / 16000.0);
  }
  return w;
}

}  // namespace

TEST_CASE("fbank frame count and shapes") {
  Waveform one_second = tone(440.0, 1.0);
  Array f = compute_fbank(one_second);
  CHECK(f.rows() == 98);
  CHECK(f.cols() == 80);

  Waveform minimal;
  minimal.samples.assign(400, 0.0);
  Array single = compute_fbank(minimal);
  CHECK(single.rows() == 1);
}

TEST_CASE("fbank frame count formula holds for random lengths") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int64_t n = rng.uniform_int(400, 20000);
    Waveform w;
    w.samples.assign(static_cast<size_t>(n), 0.0);
    CHECK(compute_fbank(w).rows() == 1 + (n - 400) / 160);
  }
}

TEST_CASE("fbank rejects short and non-16k input") {
  Waveform w;
  w.samples.assign(399, 0.0);
  CHECK_THROWS_AS(compute_fbank(w), InputError);
  w.samples.assign(1000, 0.0);
  w.sample_rate = 8000;
  CHECK_THROWS_AS(compute_fbank(w), InputError);
}

TEST_CASE("silence maps every bin to the log floor") {
  Waveform w;
  w.samples.assign(800, 0.0);
  Array f = compute_fbank(w);
  const double expect = std::log(1e-10);
  for (int64_t i = 0; i < f.numel(); ++i) CHECK(f[i] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("fbank is shift-covariant for zero-padded prefixes") {
  Waveform w = tone(523.0, 0.25);
  w.samples[0] = 0.0;
  const int k = 3;
  Waveform padded;
  padded.samples.assign(static_cast<size_t>(160 * k), 0.0);
  padded.samples.insert(padded.samples.end(), w.samples.begin(), w.samples.end());

  Array base = compute_fbank(w);
  Array shifted = compute_fbank(padded);
  CHECK(shifted.rows() == base.rows() + k);
  for (int64_t t = 0; t < base.rows(); ++t) {
    for (int64_t d = 0; d < 80; ++d) {
      CHECK(shifted.at(t + k, d) == doctest::Approx(base.at(t, d)).epsilon(1e-12));
    }
  }
}

TEST_CASE("fft matches a direct DFT") {
  Rng rng(4);
  std::vector<double> frame(512);
  for (auto& v : frame) v = rng.uniform(-1, 1);
  std::vector<double> power;
  fft_power_512(frame, power);
  for (int k = 0; k <= 256; k += 37) {
    double re = 0.0, im = 0.0;
    for (int nn = 0; nn < 512; ++nn) {
      const double ang = -2.0 * M_PI * k * nn / 512.0;
      re += frame[static_cast<size_t>(nn)] * std::cos(ang);
      im += frame[static_cast<size_t>(nn)] * std::sin(ang);
    }
    CHECK(power[static_cast<size_t>(k)] == doctest::Approx(re * re + im * im).epsilon(1e-9));
  }
}

TEST_CASE("cmvn zero-means every bin and is idempotent") {
  Rng rng(8);
  Array f = Array::uniform({40, 80}, rng, -3, 9);
  Array n1 = apply_cmvn(f);
  for (int64_t d = 0; d < 80; ++d) {
    double mean = 0.0;
    for (int64_t t = 0; t < 40; ++t) mean += n1.at(t, d);
    CHECK(std::abs(mean / 40.0) <= 1e-9);
  }
  Array n2 = apply_cmvn(n1);
  CHECK(max_abs_diff(n1, n2) <= 1e-9);

  Array constant = Array::full({10, 80}, 2.5);
  Array zeroed = apply_cmvn(constant);
  for (int64_t i = 0; i < zeroed.numel(); ++i) CHECK(zeroed[i] == 0.0);
}

TEST_CASE("spec_augment basics") {
  Rng rng(15);
  Array f = Array::uniform({120, 80}, rng, -2, 2);

  SpecAugmentConfig off;
  off.max_freq_bins = 0;
  off.max_time_frames = 0;
  CHECK(max_abs_diff(spec_augment(f, off), f) == 0.0);

  SpecAugmentConfig cfg;
  cfg.rng_seed = 99;
  Array a = spec_augment(f, cfg);
  Array b = spec_augment(f, cfg);
  CHECK(max_abs_diff(a, b) == 0.0);  // fixed seed, bitwise identical

  // masked time frames bounded by num_time_masks * max_time_frames
  double fill = 0.0;
  for (int64_t i = 0; i < f.numel(); ++i) fill += f[i];
  fill /= static_cast<double>(f.numel());
  int64_t masked_frames = 0;
  for (int64_t t = 0; t < f.rows(); ++t) {
    bool all_fill = true;
    for (int64_t d = 0; d < f.cols(); ++d) {
      if (a.at(t, d) != fill) {
        all_fill = false;
        break;
      }
    }
    if (all_fill) ++masked_frames;
  }
  CHECK(masked_frames <= cfg.num_time_masks * cfg.max_time_frames);

  // unmasked cells are untouched
  int64_t changed = 0, total = f.numel();
  for (int64_t i = 0; i < total; ++i) {
    if (a[i] != f[i]) {
      CHECK(a[i] == fill);
      ++changed;
    }
  }
  CHECK(changed < total);
}

TEST_CASE("wav round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "brst_feat_test";
  fs::create_directories(dir);
  const std::string path = (dir / "tone.wav").string();

  Waveform w = tone(440.0, 0.05);
  write_wav(path, w);
  Waveform r = read_wav(path);
  REQUIRE(r.samples.size() == w.samples.size());
  CHECK(r.sample_rate == 16000);
  for (size_t i = 0; i < r.samples.size(); i += 17) {
    CHECK(std::abs(r.samples[i] - std::rint(w.samples[i])) <= 1.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("fbnk round trip and error paths") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "brst_fbnk_test";
  fs::create_directories(dir);
  const std::string path = (dir / "feat.fbnk").string();

  Rng rng(2);
  Array f = Array::uniform({17, 80}, rng, -4, 4);
  write_fbnk(path, f);
  Array r = read_fbnk(path);
  REQUIRE(r.rows() == 17);
  REQUIRE(r.cols() == 80);
  CHECK(max_abs_diff(f, r) <= 1e-6);  // float32 storage

  CHECK_THROWS_AS(read_fbnk((dir / "missing.fbnk").string()), IoError);
  fs::remove_all(dir);
}
