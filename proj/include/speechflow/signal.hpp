#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "speechflow/rng.hpp"
#include "speechflow/tensor.hpp"

namespace speechflow {

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// 16-bit mono PCM RIFF/WAVE. Samples are scaled by 1/32768 on read and
// clamped to the int16 range on write.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform decode_wav(const std::string& bytes);
std::string encode_wav(const Waveform& w);

// Lengths are in samples.
struct StftConfig {
  std::size_t window_len = 400;  // 25 ms at 16 kHz
  std::size_t hop = 16;          // 1 ms at 16 kHz
  std::size_t fft_size = 512;    // 257 one-sided bins

  std::size_t bins() const { return fft_size / 2 + 1; }
  std::size_t frames_for(std::size_t num_samples) const;
  void validate() const;
  static StftConfig from_ms(double window_ms, double hop_ms, std::size_t fft_size, int sample_rate);
};

struct ComplexStft {
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  StftConfig config;
  std::vector<std::complex<double>> frames;  // num_frames x num_bins, row-major

  const std::complex<double>& at(std::size_t t, std::size_t k) const { return frames[t * num_bins + k]; }
  Tensor magnitude() const;
};

// In-place complex DFT; radix-2 when the length is a power of two.
void fft(std::vector<std::complex<double>>& data, bool inverse = false);

std::vector<double> hann_window(std::size_t n);

ComplexStft stft(const Waveform& w, const StftConfig& config);

// Overlap-add synthesis from mag * exp(i * arg(phase_source)), normalized by
// the summed squared synthesis window.
Waveform istft_phase_borrow(const Tensor& mag, const ComplexStft& phase_source,
                            int sample_rate = kDefaultSampleRate);

inline constexpr double kMagnitudeFloor = 1e-5;

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

Tensor log_normalize(const Tensor& mag, const NormStats& stats);
Tensor denormalize(const Tensor& normalized, const NormStats& stats);
// Normalized value of a zero magnitude.
double padding_value(const NormStats& stats);

enum class Vowel { aa, ae, iy, ow, uh };
inline constexpr Vowel kAllVowels[] = {Vowel::aa, Vowel::ae, Vowel::iy, Vowel::ow, Vowel::uh};

std::string_view vowel_name(Vowel v);
Vowel parse_vowel(std::string_view label);
bool is_vowel_label(std::string_view label);

struct Formants {
  double f1;
  double f2;
};
Formants formants(Vowel v);

// Glottal impulse train at f0 through two resonators at the vowel's
// (scaled) formants, peak-normalized to 0.9.
Waveform synth_vowel(Rng& rng, Vowel vowel, double f0, double duration_s, double speaker_shift,
                     int sample_rate = kDefaultSampleRate);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

// Adds Gaussian noise whose realized power gives exactly snr_db.
Waveform add_white_noise(const Waveform& w, Rng& rng, double snr_db);

double signal_power(std::span<const double> samples);

}  // namespace speechflow
