#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsd/csv.hpp"
#include "dsd/distill.hpp"
#include "dsd/gaussian.hpp"
#include "dsd/rng.hpp"

namespace dsd::metrics {

/// |mu1 - mu2|^2 + tr(C1 + C2 - 2 (C1^{1/2} C2 C1^{1/2})^{1/2}).
/// Covariances must be symmetric and PSD within 1e-8.
double frechet_gaussian(const Vec& mu1, const Mat& cov1, const Vec& mu2, const Mat& cov2);

/// Covariance part of frechet_gaussian (squared Bures distance).
double bures_squared(const Mat& cov1, const Mat& cov2);

/// Frechet distance between Gaussians fitted to two sample sets.
double frechet_samples(const Mat& a, const Mat& b);
double frechet_samples(const Mat& a, const gauss::GaussianFit& b);

/// Corrupts gen_samples with sigma_hat * N(0, I) and scores them against the
/// noisy reference. Both sets need at least 100 rows.
double proximal_fid(const Mat& gen_samples, double sigma_hat, const Mat& noisy_reference, Rng& rng);
double proximal_fid(const Mat& gen_samples, double sigma_hat, const gauss::GaussianFit& reference, Rng& rng);

struct MetricReport {
  std::string label;
  double frechet_to_clean = 0.0;
  double proximal_fid = 0.0;
  double w2_gaussian_fit = 0.0;  // Bures part only
  long n_samples = 0;
  std::uint64_t seed = 0;

  /// Throws DomainError unless all values are finite and nonnegative.
  void validate() const;
};

std::vector<std::string> report_columns();
void append_report(io::CsvTable& table, const MetricReport& r);

struct Selection {
  std::size_t index = 0;
  long step = 0;
  double proximal_fid = 0.0;
  double frechet_at_selected = 0.0;
  double frechet_min = 0.0;
  long frechet_min_step = 0;

  /// frechet_at_selected / frechet_min - 1.
  double relative_gap() const;
};

/// Row with the smallest proximal FID; ties go to the earliest step. Rows
/// with a NaN proximal FID are skipped.
Selection select_best_checkpoint(const std::vector<distill::MetricRow>& history);

/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dsd::metrics
