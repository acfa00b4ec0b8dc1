#include "brst/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "brst/errors.hpp"
#include "brst/rng.hpp"

namespace brst {

int64_t fbank_frame_count(int64_t num_samples) {
  if (num_samples < kFrameWidthSamples) return 0;
  return 1 + (num_samples - kFrameWidthSamples) / kFrameShiftSamples;
}

// Iterative radix-2 FFT on 512 points; returns the one-sided power spectrum.
void fft_power_512(const std::vector<double>& frame, std::vector<double>& power_out) {
  constexpr int n = kFftSize;
  static_assert((n & (n - 1)) == 0);
  std::vector<std::complex<double>> buf(n, {0.0, 0.0});
  for (size_t i = 0; i < frame.size() && i < n; ++i) buf[i] = {frame[i], 0.0};

  // bit reversal
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[static_cast<size_t>(i)], buf[static_cast<size_t>(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / len;
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const auto u = buf[static_cast<size_t>(i + k)];
        const auto v = buf[static_cast<size_t>(i + k + len / 2)] * w;
        buf[static_cast<size_t>(i + k)] = u + v;
        buf[static_cast<size_t>(i + k + len / 2)] = u - v;
        w *= wl;
      }
    }
  }
  power_out.assign(n / 2 + 1, 0.0);
  for (int k = 0; k <= n / 2; ++k) power_out[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
}

static double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
static double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters, HTK-style, spanning 0..nyquist.
static std::vector<std::vector<double>> mel_filterbank(int sample_rate) {
  const int n_bins = kFftSize / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(nyquist);
  std::vector<double> centers(kNumMelBins + 2);
  for (int i = 0; i < kNumMelBins + 2; ++i) {
    centers[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kNumMelBins + 1));
  }
  std::vector<std::vector<double>> filters(kNumMelBins, std::vector<double>(static_cast<size_t>(n_bins), 0.0));
  for (int m = 0; m < kNumMelBins; ++m) {
    const double left = centers[static_cast<size_t>(m)];
    const double center = centers[static_cast<size_t>(m + 1)];
    const double right = centers[static_cast<size_t>(m + 2)];
    for (int k = 0; k < n_bins; ++k) {
      const double freq = static_cast<double>(k) * sample_rate / kFftSize;
      if (freq > left && freq < center) {
        filters[static_cast<size_t>(m)][static_cast<size_t>(k)] = (freq - left) / (center - left);
      } else if (freq >= center && freq < right) {
        filters[static_cast<size_t>(m)][static_cast<size_t>(k)] = (right - freq) / (right - center);
      }
    }
  }
  return filters;
}

Array compute_fbank(const Waveform& w) {
  if (w.sample_rate != 16000) {
    throw InputError("compute_fbank: expected 16 kHz input, got " + std::to_string(w.sample_rate) + " Hz (resampling not supported)");
  }
  const int64_t n = static_cast<int64_t>(w.samples.size());
  if (n < kFrameWidthSamples) {
    throw InputError("compute_fbank: audio shorter than one window (" + std::to_string(n) + " < " + std::to_string(kFrameWidthSamples) + " samples)");
  }
  const int64_t frames = fbank_frame_count(n);

  std::vector<double> emphasized(w.samples.size());
  emphasized[0] = w.samples[0] - kPreEmphasis * w.samples[0];
  for (size_t i = 1; i < w.samples.size(); ++i) emphasized[i] = w.samples[i] - kPreEmphasis * w.samples[i - 1];

  std::vector<double> window(kFrameWidthSamples);
  for (int i = 0; i < kFrameWidthSamples; ++i) {
    window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (kFrameWidthSamples - 1));
  }
  static const std::vector<std::vector<double>> filters = mel_filterbank(16000);

  Array out({frames, kNumMelBins});
  std::vector<double> frame(kFrameWidthSamples);
  std::vector<double> power;
  for (int64_t t = 0; t < frames; ++t) {
    const int64_t start = t * kFrameShiftSamples;
    for (int i = 0; i < kFrameWidthSamples; ++i) {
      frame[static_cast<size_t>(i)] = emphasized[static_cast<size_t>(start + i)] * window[static_cast<size_t>(i)];
    }
    fft_power_512(frame, power);
    for (int m = 0; m < kNumMelBins; ++m) {
      double energy = 0.0;
      const auto& filt = filters[static_cast<size_t>(m)];
      for (size_t k = 0; k < power.size(); ++k) energy += filt[k] * power[k];
      out.at(t, m) = std::log(std::max(energy, kLogFloor));
    }
  }
  return out;
}

Array apply_cmvn(const Array& features) {
  if (features.ndim() != 2) throw ShapeError("apply_cmvn: expected (T, D) features");
  const int64_t t_len = features.rows(), dim = features.cols();
  Array out({t_len, dim});
  for (int64_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (int64_t t = 0; t < t_len; ++t) mean += features.at(t, d);
    mean /= static_cast<double>(t_len);
    double var = 0.0;
    for (int64_t t = 0; t < t_len; ++t) var += (features.at(t, d) - mean) * (features.at(t, d) - mean);
    var /= static_cast<double>(t_len);
    const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (int64_t t = 0; t < t_len; ++t) out.at(t, d) = (features.at(t, d) - mean) * inv_std;
  }
  return out;
}

Array spec_augment(const Array& features, const SpecAugmentConfig& cfg) {
  if (features.ndim() != 2) throw ShapeError("spec_augment: expected (T, D) features");
  if (cfg.num_freq_masks < 0 || cfg.num_time_masks < 0 || cfg.max_freq_bins < 0 || cfg.max_time_frames < 0) {
    throw ConfigError("spec_augment: mask counts and maxima must be non-negative");
  }
  const int64_t t_len = features.rows(), dim = features.cols();
  double fill = 0.0;
  for (int64_t i = 0; i < features.numel(); ++i) fill += features[i];
  fill /= static_cast<double>(features.numel());

  Array out = features;
  Rng rng(cfg.rng_seed);
  for (int i = 0; i < cfg.num_freq_masks; ++i) {
    const int64_t width = rng.uniform_int(0, std::min<int64_t>(cfg.max_freq_bins, dim));
    if (width == 0) continue;
    const int64_t start = rng.uniform_int(0, dim - width);
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t d = start; d < start + width; ++d) out.at(t, d) = fill;
    }
  }
  for (int i = 0; i < cfg.num_time_masks; ++i) {
    const int64_t width = rng.uniform_int(0, std::min<int64_t>(cfg.max_time_frames, t_len));
    if (width == 0) continue;
    const int64_t start = rng.uniform_int(0, t_len - width);
    for (int64_t t = start; t < start + width; ++t) {
      for (int64_t d = 0; d < dim; ++d) out.at(t, d) = fill;
    }
  }
  return out;
}

// ---- WAV ----

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path);
  char riff[4], wave[4];
  in.read(riff, 4);
  read_u32(in);  // chunk size
  in.read(wave, 4);
  if (std::strncmp(riff, "RIFF", 4) != 0 || std::strncmp(wave, "WAVE", 4) != 0) {
    throw IoError("not a RIFF/WAVE file: " + path);
  }
  Waveform w;
  uint16_t channels = 0, bits = 0;
  bool have_fmt = false;
  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    const uint32_t size = read_u32(in);
    if (std::strncmp(id, "fmt ", 4) == 0) {
      const uint16_t format = read_u16(in);
      channels = read_u16(in);
      w.sample_rate = static_cast<int>(read_u32(in));
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      if (format != 1) throw IoError("wav is not PCM: " + path);
      have_fmt = true;
    } else if (std::strncmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IoError("wav data chunk before fmt: " + path);
      if (channels != 1) throw InputError("wav must be mono, got " + std::to_string(channels) + " channels: " + path);
      if (bits != 16) throw InputError("wav must be 16-bit PCM: " + path);
      const size_t count = size / 2;
      std::vector<int16_t> raw(count);
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
      if (!in) throw IoError("truncated wav data: " + path);
      w.samples.resize(count);
      for (size_t i = 0; i < count; ++i) w.samples[i] = static_cast<double>(raw[i]);
      return w;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  throw IoError("wav has no data chunk: " + path);
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav file: " + path);
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<uint32_t>(w.sample_rate));
  write_u32(out, static_cast<uint32_t>(w.sample_rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (double s : w.samples) {
    const double clamped = std::clamp(s, -32768.0, 32767.0);
    const int16_t v = static_cast<int16_t>(std::lrint(clamped));
    write_u16(out, static_cast<uint16_t>(v));
  }
}

// ---- FBNK ----

Array read_fbnk(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::strncmp(magic, "FBNK", 4) != 0) throw IoError("bad FBNK magic in " + path);
  const uint32_t t_len = read_u32(in);
  const uint32_t dim = read_u32(in);
  if (!in || t_len == 0 || dim == 0) throw IoError("bad FBNK header in " + path);
  std::vector<float> raw(static_cast<size_t>(t_len) * dim);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) throw IoError("truncated FBNK payload in " + path);
  Array out({static_cast<int64_t>(t_len), static_cast<int64_t>(dim)});
  for (size_t i = 0; i < raw.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<double>(raw[i]);
  return out;
}

void write_fbnk(const std::string& path, const Array& features) {
  if (features.ndim() != 2) throw ShapeError("write_fbnk: expected (T, D) features");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path);
  out.write("FBNK", 4);
  write_u32(out, static_cast<uint32_t>(features.rows()));
  write_u32(out, static_cast<uint32_t>(features.cols()));
  std::vector<float> raw(static_cast<size_t>(features.numel()));
  for (int64_t i = 0; i < features.numel(); ++i) raw[static_cast<size_t>(i)] = static_cast<float>(features[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw IoError("failed writing feature payload to " + path);
}

}  // namespace brst
