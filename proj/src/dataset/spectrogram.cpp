#include <algorithm>
#include <cmath>

#include "speechflow/dataset.hpp"
#include "speechflow/error.hpp"

namespace speechflow {

void SpectrogramConfig::validate() const {
  stft.validate();
  if (bands < stft.bins())
    throw InvalidArgument("spectrogram bands (" + std::to_string(bands) + ") fewer than STFT bins (" +
                          std::to_string(stft.bins()) + ")");
  if (frames != bands) throw InvalidArgument("spectrogram images must be square");
  if (size == 0 || frames % size != 0)
    throw InvalidArgument("image size " + std::to_string(size) + " must divide " + std::to_string(frames));
}

Waveform segment_waveform(const Waveform& w, const SegmentRecord& rec) {
  if (rec.start_sample >= rec.end_sample || rec.end_sample > w.size())
    throw InvalidArgument("segment [" + std::to_string(rec.start_sample) + ", " + std::to_string(rec.end_sample) +
                          ") outside waveform of " + std::to_string(w.size()) + " samples");
  return Waveform{{w.samples.begin() + static_cast<long>(rec.start_sample),
                   w.samples.begin() + static_cast<long>(rec.end_sample)},
                  w.sample_rate};
}

std::variant<LogSpectrogram, Discard> log_spectrogram(const Waveform& w, const SegmentRecord& rec,
                                                       const SpectrogramConfig& config) {
  config.validate();
  const Waveform segment = segment_waveform(w, rec);
  const std::size_t length = rec.end_sample - rec.start_sample;
  if (length < config.stft.window_len) return Discard{"segment shorter than one analysis window"};
  const std::size_t frames = config.stft.frames_for(length);
  if (frames > config.frames)
    return Discard{std::to_string(frames) + " frames exceeds " + std::to_string(config.frames)};

  const ComplexStft s = stft(segment, config.stft);
  LogSpectrogram out{Tensor({config.frames, config.bands}, std::log(kMagnitudeFloor)), frames, s.num_bins};
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < s.num_bins; ++k) out.log_mag.at(t, k) = std::log(std::abs(s.at(t, k)) + kMagnitudeFloor);
  return out;
}

Tensor average_pool(const Tensor& image, std::size_t factor) {
  if (image.rank() != 2 || factor == 0 || image.dim(0) % factor || image.dim(1) % factor)
    throw DimensionError("average_pool: " + shape_string(image.shape()) + " not divisible by " +
                         std::to_string(factor));
  if (factor == 1) return image;
  const std::size_t rows = image.dim(0) / factor, cols = image.dim(1) / factor;
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double first = image.at(i * factor, j * factor);
      bool uniform = true;
      double s = 0.0;
      for (std::size_t a = 0; a < factor; ++a)
        for (std::size_t b = 0; b < factor; ++b) {
          const double v = image.at(i * factor + a, j * factor + b);
          uniform = uniform && v == first;
          s += v;
        }
      out.at(i, j) = uniform ? first : s / double(factor * factor);
    }
  return out;
}

namespace {

Tensor normalize_log_image(const Tensor& log_image, const NormStats& stats) {
  Tensor out(log_image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (log_image[i] - stats.mean) / stats.std;
  return out;
}

}  // namespace

std::variant<Spectrogram, Discard> segment_to_spectrogram(const Waveform& w, const SegmentRecord& rec,
                                                          const SpectrogramConfig& config, const NormStats& stats) {
  if (!(stats.std > 0)) throw InvalidArgument("normalization std must be positive");
  auto log = log_spectrogram(w, rec, config);
  if (auto* d = std::get_if<Discard>(&log)) return *d;
  const auto& image = std::get<LogSpectrogram>(log);
  const Tensor pooled = average_pool(image.log_mag, config.pool());
  return Spectrogram{normalize_log_image(pooled, stats).reshaped({1, config.size, config.size}), rec,
                     image.valid_frames};
}

void LogStatsAccumulator::add(const LogSpectrogram& s) {
  for (std::size_t t = 0; t < s.valid_frames; ++t)
    for (std::size_t k = 0; k < s.valid_bands; ++k) {
      const double v = s.log_mag.at(t, k);
      sum += v;
      sum_sq += v * v;
    }
  count += s.valid_frames * s.valid_bands;
}

NormStats LogStatsAccumulator::finish() const {
  if (count == 0) throw Error("no unpadded pixels to estimate normalization statistics");
  const double mean = sum / double(count);
  const double var = std::max(0.0, sum_sq / double(count) - mean * mean);
  if (!(var > 0)) throw Error("log-magnitude variance is zero");
  return {mean, std::sqrt(var)};
}

Tensor add_jitter(const Tensor& pixels, Rng& rng, double delta) {
  if (!(delta >= 0)) throw InvalidArgument("jitter delta must be non-negative");
  if (delta == 0) return pixels;
  Tensor out = pixels;
  for (auto& v : out.data()) v += rng.uniform(-delta, delta);
  return out;
}

}  // namespace speechflow
