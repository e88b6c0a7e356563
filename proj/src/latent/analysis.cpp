#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "speechflow/latent.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd to_eigen(const Tensor& t) { return Eigen::Map<const VectorXd>(t.data().data(), t.size()); }

Tensor from_eigen(const VectorXd& v) {
  Tensor t({static_cast<std::size_t>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

void require_equal_lengths(std::span<const Tensor> vectors, std::size_t d, const char* context) {
  for (const Tensor& v : vectors)
    if (v.size() != d)
      throw DimensionError(std::string(context) + ": vector of length " + std::to_string(v.size()) + ", expected " +
                           std::to_string(d));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Leading eigenvector of RᵀR using whichever of RᵀR, RRᵀ is smaller.
std::optional<VectorXd> leading_direction(const MatrixXd& r) {
  VectorXd v;
  double top = 0.0;
  if (r.rows() < r.cols()) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(r * r.transpose());
    top = eig.eigenvalues()(eig.eigenvalues().size() - 1);
    v = r.transpose() * eig.eigenvectors().col(eig.eigenvalues().size() - 1);
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(r.transpose() * r);
    top = eig.eigenvalues()(eig.eigenvalues().size() - 1);
    v = eig.eigenvectors().col(eig.eigenvalues().size() - 1);
  }
  const double scale = r.squaredNorm();
  if (!(top > 1e-12 * scale) || v.norm() == 0.0) return std::nullopt;
  return v;
}

}  // namespace

DimensionMoments moments(std::span<const Tensor> vectors, std::size_t dim) {
  if (vectors.empty()) throw InvalidArgument("moments of an empty set");
  const double n = static_cast<double>(vectors.size());
  DimensionMoments m;
  m.index = dim;
  for (const Tensor& v : vectors) m.mean += v[dim] / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (const Tensor& v : vectors) {
    const double c = v[dim] - m.mean;
    m2 += c * c / n;
    m3 += c * c * c / n;
    m4 += c * c * c * c / n;
  }
  m.variance = m2;
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

bool is_degenerate(const DimensionMoments& m) {
  return m.variance <= kDegenerateVariance * (1.0 + m.mean * m.mean);
}

GaussianityReport gaussianity_report(std::span<const Tensor> vectors, std::size_t dims_sampled, Rng& rng) {
  if (vectors.size() < 8) throw InvalidArgument("gaussianity_report: need at least 8 vectors");
  const std::size_t d = vectors[0].size();
  require_equal_lengths(vectors, d, "gaussianity_report");

  GaussianityReport report;
  std::vector<DimensionMoments> usable;
  for (std::size_t i = 0; i < d; ++i) {
    DimensionMoments m = moments(vectors, i);
    if (is_degenerate(m))
      report.degenerate.push_back(i);
    else
      usable.push_back(m);
  }
  if (dims_sampled > 0 && dims_sampled < usable.size()) {
    for (std::size_t i = 0; i < dims_sampled; ++i) std::swap(usable[i], usable[i + rng.below(usable.size() - i)]);
    usable.resize(dims_sampled);
    std::sort(usable.begin(), usable.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  }
  report.dims = std::move(usable);
  for (const auto& m : report.dims) {
    report.mean_abs_skewness += std::abs(m.skewness);
    report.mean_abs_excess_kurtosis += std::abs(m.excess_kurtosis);
  }
  if (!report.dims.empty()) {
    report.mean_abs_skewness /= static_cast<double>(report.dims.size());
    report.mean_abs_excess_kurtosis /= static_cast<double>(report.dims.size());
  }
  if (report.dims.size() >= 2) {
    const std::size_t a = rng.below(report.dims.size());
    std::size_t b = rng.below(report.dims.size() - 1);
    if (b >= a) ++b;
    report.scatter_x = report.dims[a].index;
    report.scatter_y = report.dims[b].index;
    for (const Tensor& v : vectors) report.scatter.emplace_back(v[report.scatter_x], v[report.scatter_y]);
  }
  return report;
}

std::string csv_comment(const nlohmann::json& echo) { return echo.is_null() ? "" : "# config: " + echo.dump() + "\n"; }

void write_gaussianity_csv(const std::filesystem::path& path, const GaussianityReport& report,
                           const nlohmann::json& echo) {
  std::ostringstream out;
  out << csv_comment(echo);
  out << "dim,mean,variance,skewness,excess_kurtosis,degenerate\n";
  for (const auto& m : report.dims)
    out << m.index << ',' << format_double(m.mean) << ',' << format_double(m.variance) << ','
        << format_double(m.skewness) << ',' << format_double(m.excess_kurtosis) << ",0\n";
  for (std::size_t i : report.degenerate) out << i << ",,0,,,1\n";
  write_file_atomic(path, out.str());
}

void write_scatter_2d_csv(const std::filesystem::path& path, const GaussianityReport& report,
                          const nlohmann::json& echo) {
  std::ostringstream out;
  out << csv_comment(echo);
  out << "dim_" << report.scatter_x << ",dim_" << report.scatter_y << "\n";
  for (const auto& [x, y] : report.scatter) out << format_double(x) << ',' << format_double(y) << '\n';
  write_file_atomic(path, out.str());
}

LdaProbe lda_fit(std::span<const Tensor> class_a, std::span<const Tensor> class_b) {
  if (class_a.size() < 2 || class_b.size() < 2) throw InvalidArgument("lda_fit: each class needs at least 2 vectors");
  const std::size_t d = class_a[0].size();
  require_equal_lengths(class_a, d, "lda_fit");
  require_equal_lengths(class_b, d, "lda_fit");

  LdaProbe probe;
  probe.mean_a = mean_vector(class_a);
  probe.mean_b = mean_vector(class_b);
  const VectorXd ma = to_eigen(probe.mean_a), mb = to_eigen(probe.mean_b);
  const VectorXd delta = mb - ma;
  if (!(delta.norm() > 1e-12 * std::max({ma.norm(), mb.norm(), 1e-300})))
    throw DegenerateProbeError("lda_fit: class means coincide");

  const std::size_t n = class_a.size() + class_b.size();
  MatrixXd x(n, d);  // within-class centered rows; S_w = XᵀX
  MatrixXd pooled(n, d);
  std::size_t row = 0;
  for (const auto& [set, mean] : {std::pair{class_a, &ma}, std::pair{class_b, &mb}})
    for (const Tensor& v : set) {
      pooled.row(row) = to_eigen(v).transpose();
      x.row(row++) = (to_eigen(v) - *mean).transpose();
    }
  const double trace = x.squaredNorm();
  if (!(trace > 0)) throw DegenerateProbeError("lda_fit: within-class scatter is zero");
  probe.lambda = kLdaShrinkage * trace / static_cast<double>(d);

  // (XᵀX + λI)⁻¹δ, through the n x n dual system when d > n.
  VectorXd w;
  if (d > n) {
    const MatrixXd gram = x * x.transpose() + probe.lambda * MatrixXd::Identity(n, n);
    w = (delta - x.transpose() * gram.ldlt().solve(x * delta)) / probe.lambda;
  } else {
    const MatrixXd sw = x.transpose() * x + probe.lambda * MatrixXd::Identity(d, d);
    w = sw.ldlt().solve(delta);
  }
  VectorXd d1 = w.normalized();
  probe.fisher_ratio = std::pow(delta.dot(d1), 2) / ((x * d1).squaredNorm() + probe.lambda);

  const VectorXd center = pooled.colwise().mean().transpose();
  MatrixXd residual = pooled.rowwise() - center.transpose();
  residual -= (residual * d1) * d1.transpose();
  VectorXd d2;
  if (auto lead = leading_direction(residual)) {
    d2 = *lead;
  } else {
    Eigen::Index j = 0;
    d1.cwiseAbs().minCoeff(&j);
    d2 = VectorXd::Unit(d, j);
  }
  for (int pass = 0; pass < 2; ++pass) {
    d2 -= d2.dot(d1) * d1;
    d2.normalize();
  }
  Eigen::Index big = 0;
  d2.cwiseAbs().maxCoeff(&big);
  if (d2[big] < 0) d2 = -d2;

  probe.direction_1 = from_eigen(d1);
  probe.direction_2 = from_eigen(d2);
  return probe;
}

std::vector<ScatterRow> project_scatter(std::span<const Tensor> vectors, std::span<const std::string> labels,
                                        const LdaProbe& probe) {
  if (vectors.size() != labels.size()) throw DimensionError("project_scatter: one label per vector required");
  require_equal_lengths(vectors, probe.direction_1.size(), "project_scatter");
  std::vector<ScatterRow> rows;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Tensor v = vectors[i].reshaped({vectors[i].size()});
    rows.push_back({dot(v, probe.direction_1), dot(v, probe.direction_2), labels[i]});
  }
  return rows;
}

void write_scatter_csv(const std::filesystem::path& path, std::span<const ScatterRow> rows,
                       const nlohmann::json& echo) {
  std::ostringstream out;
  out << csv_comment(echo);
  out << "p1,p2,label\n";
  for (const auto& r : rows) out << format_double(r.p1) << ',' << format_double(r.p2) << ',' << r.label << '\n';
  write_file_atomic(path, out.str());
}

std::string render_pgm(const Tensor& image) {
  Tensor img = image;
  if (img.rank() == 3 && img.dim(0) == 1) img = img.reshaped({img.dim(1), img.dim(2)});
  if (img.rank() != 2) throw DimensionError("render_pgm: expected a 2-d image, got " + shape_string(image.shape()));
  const std::size_t frames = img.dim(0), bins = img.dim(1);
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(frames) + " " + std::to_string(bins) + "\n255\n";
  for (std::size_t r = 0; r < bins; ++r)
    for (std::size_t c = 0; c < frames; ++c) {
      const double v = range > 0 ? (img.at(c, bins - 1 - r) - *lo) / range : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) { write_file_atomic(path, render_pgm(image)); }

Tensor spectrogram_magnitude(const Tensor& pixels, const NormStats& stats, const SpectrogramConfig& config,
                             std::size_t frames, std::size_t bins) {
  config.validate();
  const Shape expected{1, config.size, config.size};
  if (pixels.shape() != expected && pixels.shape() != Shape{config.size, config.size})
    throw DimensionError("spectrogram of shape " + shape_string(pixels.shape()) + ", expected " +
                         shape_string(expected));
  if (frames == 0 || frames > config.frames || bins == 0 || bins > config.bands)
    throw InvalidArgument("spectrogram_magnitude: crop exceeds the image");
  const std::size_t pool = config.pool();
  Tensor log_image({frames, bins});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < bins; ++k) log_image.at(t, k) = pixels[(t / pool) * config.size + k / pool];
  return denormalize(log_image, stats);
}

Waveform reconstruct(const Tensor& pixels, const NormStats& stats, const SpectrogramConfig& config,
                     const ComplexStft& phase_source, int sample_rate) {
  const Tensor mag = spectrogram_magnitude(pixels, stats, config, phase_source.num_frames, phase_source.num_bins);
  return istft_phase_borrow(mag, phase_source, sample_rate);
}

}  // namespace speechflow
