#include <algorithm>
#include <cmath>
#include <numbers>

#include "speechflow/error.hpp"
#include "speechflow/signal.hpp"

namespace speechflow {

namespace {

// Two-pole resonator at centre frequency f with bandwidth bw (Hz), unity
// gain at DC removed by the peak normalization afterwards.
void resonate(std::vector<double>& x, double f, double bw, int sample_rate) {
  const double r = std::exp(-std::numbers::pi * bw / sample_rate);
  const double theta = 2 * std::numbers::pi * f / sample_rate;
  const double a1 = 2 * r * std::cos(theta), a2 = -r * r;
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = v + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

}  // namespace

std::string_view vowel_name(Vowel v) {
  switch (v) {
    case Vowel::aa: return "aa";
    case Vowel::ae: return "ae";
    case Vowel::iy: return "iy";
    case Vowel::ow: return "ow";
    case Vowel::uh: return "uh";
  }
  return "?";
}

bool is_vowel_label(std::string_view label) {
  for (Vowel v : kAllVowels)
    if (vowel_name(v) == label) return true;
  return false;
}

Vowel parse_vowel(std::string_view label) {
  for (Vowel v : kAllVowels)
    if (vowel_name(v) == label) return v;
  throw InvalidArgument("unknown vowel label '" + std::string(label) + "'");
}

Formants formants(Vowel v) {
  switch (v) {
    case Vowel::aa: return {730, 1090};
    case Vowel::ae: return {660, 1720};
    case Vowel::iy: return {270, 2290};
    case Vowel::ow: return {570, 840};
    case Vowel::uh: return {440, 1020};
  }
  return {500, 1500};
}

Waveform synth_vowel(Rng& rng, Vowel vowel, double f0, double duration_s, double speaker_shift,
                     int sample_rate) {
  if (!(f0 >= 70 && f0 <= 350)) throw InvalidArgument("synth_vowel: f0 must lie in [70, 350] Hz");
  if (!(duration_s > 0)) throw InvalidArgument("synth_vowel: duration must be positive");
  if (!(speaker_shift > -0.5 && speaker_shift < 0.5)) throw InvalidArgument("synth_vowel: speaker_shift out of range");
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate));
  std::vector<double> x(n, 0.0);

  // Impulse train with a random start phase and 1% cycle-to-cycle jitter.
  const double period = sample_rate / f0;
  double t = rng.uniform() * period;
  while (t < static_cast<double>(n)) {
    x[static_cast<std::size_t>(t)] += 1.0;
    t += period * (1.0 + 0.01 * (2 * rng.uniform() - 1));
  }
  // Faint aspiration so the spectrum has no exact zeros.
  for (double& v : x) v += 1e-3 * rng.normal();

  const Formants f = formants(vowel);
  const double scale = 1.0 + speaker_shift;
  resonate(x, f.f1 * scale, 90.0, sample_rate);
  resonate(x, f.f2 * scale, 110.0, sample_rate);

  // 10 ms raised-cosine onset and offset.
  const std::size_t ramp = std::min(n / 2, static_cast<std::size_t>(sample_rate / 100));
  for (std::size_t i = 0; i < ramp; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * double(i) / double(ramp));
    x[i] *= g;
    x[n - 1 - i] *= g;
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0)
    for (double& v : x) v *= 0.9 / peak;
  return Waveform{std::move(x), sample_rate};
}

double signal_power(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double p = 0.0;
  for (double v : samples) p += v * v;
  return p / double(samples.size());
}

Waveform add_white_noise(const Waveform& w, Rng& rng, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return w;
  if (std::isnan(snr_db)) throw InvalidArgument("add_white_noise: snr_db is NaN");
  const double p_signal = signal_power(w.samples);
  if (!(p_signal > 0)) throw InvalidArgument("add_white_noise: input is silent");
  std::vector<double> noise(w.size());
  for (double& v : noise) v = rng.normal();
  const double p_target = p_signal / std::pow(10.0, snr_db / 10.0);
  const double gain = std::sqrt(p_target / signal_power(noise));
  Waveform out = w;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += gain * noise[i];
  return out;
}

}  // namespace speechflow
