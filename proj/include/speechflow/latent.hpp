#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "speechflow/dataset.hpp"
#include "speechflow/error.hpp"
#include "speechflow/flow.hpp"
#include "speechflow/rng.hpp"
#include "speechflow/signal.hpp"

namespace speechflow {

struct EncodeResult {
  LatentCode code;
  double log_px = 0.0;  // nats
};

EncodeResult encode(const FlowModel& model, const Tensor& x);
Tensor decode(const FlowModel& model, const LatentCode& z);
LatentCode make_code(const FlowModel& model, Tensor flat);

struct Samples {
  std::vector<LatentCode> codes;
  std::vector<Tensor> spectrograms;
};

Samples sample(const FlowModel& model, Rng& rng, std::size_t n, double temperature);

// {0.1, 0.2, ..., 0.9}
std::vector<double> default_alphas();
// {0, 0.1, ..., 0.8}
std::vector<double> default_betas();
// Evenly spaced lo, lo + step, ... up to hi inclusive (within step/1000).
std::vector<double> sweep(double lo, double hi, double step);

std::vector<LatentCode> interpolate(const LatentCode& a, const LatentCode& b, std::span<const double> alphas);

struct DisplacementVector {
  Tensor xi;
  std::size_t n_clean = 0;
  std::size_t n_noisy = 0;
  std::optional<double> snr_db;
};

DisplacementVector displacement(std::span<const Tensor> clean, std::span<const Tensor> noisy,
                                std::optional<double> snr_db = std::nullopt);
LatentCode denoise(const LatentCode& z, const Tensor& xi, double beta);

Tensor mean_vector(std::span<const Tensor> vectors);

struct DimensionMoments {
  std::size_t index = 0;
  double mean = 0.0;
  double variance = 0.0;  // population
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

struct GaussianityReport {
  std::vector<DimensionMoments> dims;      // the sampled, non-degenerate dimensions
  std::vector<std::size_t> degenerate;     // every zero-variance dimension
  double mean_abs_skewness = 0.0;
  double mean_abs_excess_kurtosis = 0.0;
  std::size_t scatter_x = 0, scatter_y = 0;
  std::vector<std::pair<double, double>> scatter;
};

// Relative variance below which a dimension counts as constant.
inline constexpr double kDegenerateVariance = 1e-12;

DimensionMoments moments(std::span<const Tensor> vectors, std::size_t dim);
bool is_degenerate(const DimensionMoments& m);

// Moments of dims_sampled dimensions drawn without replacement from the
// non-degenerate ones (all of them when dims_sampled is 0 or too large).
GaussianityReport gaussianity_report(std::span<const Tensor> vectors, std::size_t dims_sampled, Rng& rng);

// CSV writers; a non-null echo is written first as a "# config:" comment.
void write_gaussianity_csv(const std::filesystem::path& path, const GaussianityReport& report,
                           const nlohmann::json& echo = nullptr);
void write_scatter_2d_csv(const std::filesystem::path& path, const GaussianityReport& report,
                          const nlohmann::json& echo = nullptr);

class DegenerateProbeError : public Error {
 public:
  using Error::Error;
};

struct LdaProbe {
  Tensor direction_1;  // unit, points from class a to class b
  Tensor direction_2;  // unit, orthogonal to direction_1
  Tensor mean_a, mean_b;
  double fisher_ratio = 0.0;
  double lambda = 0.0;
};

// Regularization lambda = kLdaShrinkage * trace(S_w) / d.
inline constexpr double kLdaShrinkage = 1e-3;

LdaProbe lda_fit(std::span<const Tensor> class_a, std::span<const Tensor> class_b);

struct ScatterRow {
  double p1 = 0.0;
  double p2 = 0.0;
  std::string label;
};

std::vector<ScatterRow> project_scatter(std::span<const Tensor> vectors, std::span<const std::string> labels,
                                        const LdaProbe& probe);
void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterRow> rows,
                       const nlohmann::json& echo = nullptr);
std::string csv_comment(const nlohmann::json& echo);

// 8-bit greyscale rendering, min-max scaled; a time-major spectrogram is
// drawn with time left to right and low frequencies at the bottom.
std::string render_pgm(const Tensor& image);
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// Undoes normalization and pooling, crops to the source's frames and bins,
// and resynthesizes with the source's phase.
Tensor spectrogram_magnitude(const Tensor& pixels, const NormStats& stats, const SpectrogramConfig& config,
                             std::size_t frames, std::size_t bins);
Waveform reconstruct(const Tensor& pixels, const NormStats& stats, const SpectrogramConfig& config,
                     const ComplexStft& phase_source, int sample_rate = kDefaultSampleRate);

}  // namespace speechflow
