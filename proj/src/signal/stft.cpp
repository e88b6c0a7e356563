#include <algorithm>
#include <cmath>
#include <numbers>

#include "speechflow/error.hpp"
#include "speechflow/signal.hpp"

namespace speechflow {

namespace {

bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

}  // namespace

std::size_t StftConfig::frames_for(std::size_t num_samples) const {
  if (num_samples < window_len) return 0;
  return (num_samples - window_len) / hop + 1;
}

void StftConfig::validate() const {
  if (window_len == 0 || hop == 0 || fft_size == 0) throw InvalidArgument("STFT lengths must be positive");
  if (fft_size < window_len)
    throw InvalidArgument("fft_size " + std::to_string(fft_size) + " shorter than window " +
                          std::to_string(window_len));
}

StftConfig StftConfig::from_ms(double window_ms, double hop_ms, std::size_t fft_size, int sample_rate) {
  StftConfig c;
  c.window_len = static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
  c.hop = static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
  c.fft_size = fft_size;
  c.validate();
  return c;
}

void fft(std::vector<std::complex<double>>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  const double sign = inverse ? 1.0 : -1.0;
  if (!is_power_of_two(n)) {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> s = 0;
      for (std::size_t t = 0; t < n; ++t)
        s += data[t] * std::polar(1.0, sign * 2 * std::numbers::pi * double((k * t) % n) / double(n));
      out[k] = s;
    }
    data = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = sign * 2 * std::numbers::pi / double(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto w = std::polar(1.0, angle * double(k));
        const auto u = data[start + k];
        const auto v = data[start + k + len / 2] * w;
        data[start + k] = u + v;
        data[start + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<double> hann_window(std::size_t n) {
  // Periodic Hann.
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * double(i) / double(n));
  return w;
}

Tensor ComplexStft::magnitude() const {
  Tensor m({num_frames, num_bins});
  for (std::size_t i = 0; i < frames.size(); ++i) m[i] = std::abs(frames[i]);
  return m;
}

ComplexStft stft(const Waveform& w, const StftConfig& config) {
  config.validate();
  if (w.size() < config.window_len)
    throw InvalidArgument("stft: input of " + std::to_string(w.size()) + " samples shorter than window " +
                          std::to_string(config.window_len));
  ComplexStft s;
  s.config = config;
  s.num_frames = config.frames_for(w.size());
  s.num_bins = config.bins();
  s.frames.resize(s.num_frames * s.num_bins);
  const auto window = hann_window(config.window_len);
  std::vector<std::complex<double>> buf(config.fft_size);
  for (std::size_t t = 0; t < s.num_frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const double* src = w.samples.data() + t * config.hop;
    for (std::size_t i = 0; i < config.window_len; ++i) buf[i] = src[i] * window[i];
    fft(buf);
    std::copy_n(buf.begin(), s.num_bins, s.frames.begin() + t * s.num_bins);
  }
  return s;
}

Waveform istft_phase_borrow(const Tensor& mag, const ComplexStft& phase_source, int sample_rate) {
  if (mag.rank() != 2 || mag.dim(0) != phase_source.num_frames || mag.dim(1) != phase_source.num_bins)
    throw DimensionError("istft_phase_borrow: magnitude " + shape_string(mag.shape()) +
                         " does not match phase source " + std::to_string(phase_source.num_frames) + "x" +
                         std::to_string(phase_source.num_bins));
  const StftConfig& c = phase_source.config;
  const std::size_t n_fft = c.fft_size, bins = phase_source.num_bins;
  const std::size_t length = (phase_source.num_frames - 1) * c.hop + c.window_len;
  const auto window = hann_window(c.window_len);

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.assign(length, 0.0);
  std::vector<double> norm(length, 0.0);
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t t = 0; t < phase_source.num_frames; ++t) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double phase = std::arg(phase_source.at(t, k));
      buf[k] = std::polar(mag.at(t, k), phase);
    }
    for (std::size_t k = bins; k < n_fft; ++k) buf[k] = std::conj(buf[n_fft - k]);
    fft(buf, true);
    const std::size_t offset = t * c.hop;
    for (std::size_t i = 0; i < c.window_len; ++i) {
      out.samples[offset + i] += buf[i].real() / double(n_fft) * window[i];
      norm[offset + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < length; ++i) out.samples[i] /= std::max(norm[i], 1e-8);
  return out;
}

Tensor log_normalize(const Tensor& mag, const NormStats& stats) {
  if (!(stats.std > 0)) throw InvalidArgument("log_normalize: std must be positive");
  Tensor y(mag.shape());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (mag[i] < 0) throw InvalidArgument("log_normalize: negative magnitude");
    y[i] = (std::log(mag[i] + kMagnitudeFloor) - stats.mean) / stats.std;
  }
  return y;
}

Tensor denormalize(const Tensor& normalized, const NormStats& stats) {
  Tensor m(normalized.shape());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = std::max(0.0, std::exp(normalized[i] * stats.std + stats.mean) - kMagnitudeFloor);
  return m;
}

double padding_value(const NormStats& stats) { return (std::log(kMagnitudeFloor) - stats.mean) / stats.std; }

}  // namespace speechflow
