#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brst/array.hpp"

namespace brst {

struct Waveform {
  std::vector<double> samples;  // PCM promoted to double, mono
  int sample_rate = 16000;
};

// 80-dim log-Mel features, 25 ms windows every 10 ms at 16 kHz.
inline constexpr int kNumMelBins = 80;
inline constexpr int kFrameWidthSamples = 400;
inline constexpr int kFrameShiftSamples = 160;
inline constexpr int kFftSize = 512;
inline constexpr double kPreEmphasis = 0.97;
inline constexpr double kLogFloor = 1e-10;

struct SpecAugmentConfig {
  int num_freq_masks = 2;
  int max_freq_bins = 10;
  int num_time_masks = 2;
  int max_time_frames = 50;
  uint64_t rng_seed = 0;
};

// Frame count for n samples: 1 + floor((n - 400) / 160).
int64_t fbank_frame_count(int64_t num_samples);

// (T x 80) log-Mel energies: pre-emphasis 0.97, Hann window, 512-point
// power spectrum, 80 triangular Mel filters over 0..8000 Hz, natural log
// with floor 1e-10.
Array compute_fbank(const Waveform& w);

// Per-utterance, per-bin mean/variance normalization (variance floor 1e-8).
Array apply_cmvn(const Array& features);

// Masked regions are set to the utterance mean; widths and starts are
// drawn from the seeded rng, so a fixed seed reproduces the exact output.
Array spec_augment(const Array& features, const SpecAugmentConfig& cfg);

// 16-bit PCM mono RIFF WAV.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Flat binary features: "FBNK" magic, u32 frame count, u32 dim, then
// row-major float32 little-endian payload.
Array read_fbnk(const std::string& path);
void write_fbnk(const std::string& path, const Array& features);

// Simple in-phase DFT used as the FFT test oracle.
void fft_power_512(const std::vector<double>& frame, std::vector<double>& power_out);

}  // namespace brst
