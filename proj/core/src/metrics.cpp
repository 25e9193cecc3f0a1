#include "dsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dsd/errors.hpp"

namespace dsd::metrics {

namespace {

constexpr double kPsdTol = 1e-8;

Mat sym(const Mat& a) { return 0.5 * (a + a.transpose()); }

void require_cov(const Mat& c, const char* what) {
  if (c.rows() != c.cols()) throw PreconditionError(std::string(what) + ": covariance must be square");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > kPsdTol) {
    throw PreconditionError(std::string(what) + ": covariance is not symmetric");
  }
}

}  // namespace

double bures_squared(const Mat& cov1, const Mat& cov2) {
  require_cov(cov1, "frechet_gaussian");
  require_cov(cov2, "frechet_gaussian");
  if (cov1.rows() != cov2.rows()) throw PreconditionError("frechet_gaussian: dimension mismatch");
  const Mat s1 = gauss::psd_sqrt(sym(cov1), kPsdTol);
  gauss::psd_sqrt(sym(cov2), kPsdTol);  // indefiniteness check only
  const Mat inner = sym(s1 * cov2 * s1);
  const double scale = std::max(1.0, inner.cwiseAbs().maxCoeff());
  const Mat root = gauss::psd_sqrt(inner, kPsdTol * scale);
  const double v = cov1.trace() + cov2.trace() - 2.0 * root.trace();
  return std::max(v, 0.0);
}

double frechet_gaussian(const Vec& mu1, const Mat& cov1, const Vec& mu2, const Mat& cov2) {
  if (mu1.size() != mu2.size() || mu1.size() != cov1.rows()) {
    throw PreconditionError("frechet_gaussian: dimension mismatch");
  }
  return (mu1 - mu2).squaredNorm() + bures_squared(cov1, cov2);
}

double frechet_samples(const Mat& a, const gauss::GaussianFit& b) {
  const gauss::GaussianFit fa = gauss::fit_gaussian(a);
  return frechet_gaussian(fa.mean, fa.cov, b.mean, b.cov);
}

double frechet_samples(const Mat& a, const Mat& b) { return frechet_samples(a, gauss::fit_gaussian(b)); }

double proximal_fid(const Mat& gen_samples, double sigma_hat, const gauss::GaussianFit& reference, Rng& rng) {
  if (gen_samples.rows() < 100) throw InsufficientDataError("proximal_fid: need at least 100 generated samples");
  if (!(sigma_hat >= 0.0)) throw PreconditionError("proximal_fid: sigma_hat must be >= 0");
  Mat noisy = gen_samples;
  if (sigma_hat > 0.0) {
    for (Eigen::Index i = 0; i < noisy.rows(); ++i)
      for (Eigen::Index j = 0; j < noisy.cols(); ++j) noisy(i, j) += sigma_hat * rng.normal();
  }
  return frechet_samples(noisy, reference);
}

double proximal_fid(const Mat& gen_samples, double sigma_hat, const Mat& noisy_reference, Rng& rng) {
  if (noisy_reference.rows() < 100) throw InsufficientDataError("proximal_fid: need at least 100 reference samples");
  return proximal_fid(gen_samples, sigma_hat, gauss::fit_gaussian(noisy_reference), rng);
}

void MetricReport::validate() const {
  for (double v : {frechet_to_clean, proximal_fid, w2_gaussian_fit}) {
    if (!std::isfinite(v) || v < 0.0) throw DomainError("MetricReport: values must be finite and >= 0");
  }
  if (n_samples < 0) throw DomainError("MetricReport: negative sample count");
}

std::vector<std::string> report_columns() {
  return {"label", "frechet_to_clean", "proximal_fid", "w2_gaussian_fit", "n_samples", "seed"};
}

void append_report(io::CsvTable& table, const MetricReport& r) {
  r.validate();
  table.add_row({r.label, io::format_double(r.frechet_to_clean), io::format_double(r.proximal_fid),
                 io::format_double(r.w2_gaussian_fit), std::to_string(r.n_samples), std::to_string(r.seed)});
}

double Selection::relative_gap() const {
  if (frechet_min == 0.0) return frechet_at_selected == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return frechet_at_selected / frechet_min - 1.0;
}

Selection select_best_checkpoint(const std::vector<distill::MetricRow>& history) {
  if (history.empty()) throw PreconditionError("select_best_checkpoint: empty history");
  Selection sel;
  bool found = false;
  bool have_min = false;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const distill::MetricRow& row = history[i];
    if (!std::isnan(row.proximal_fid) && (!found || row.proximal_fid < sel.proximal_fid)) {
      found = true;
      sel.index = i;
      sel.step = row.step;
      sel.proximal_fid = row.proximal_fid;
      sel.frechet_at_selected = row.frechet_clean;
    }
    if (!std::isnan(row.frechet_clean) && (!have_min || row.frechet_clean < sel.frechet_min)) {
      have_min = true;
      sel.frechet_min = row.frechet_clean;
      sel.frechet_min_step = row.step;
    }
  }
  if (!found) throw PreconditionError("select_best_checkpoint: no row has a proximal FID");
  if (!have_min) sel.frechet_min = std::numeric_limits<double>::quiet_NaN();
  return sel;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw PreconditionError("spearman: length mismatch");
  if (a.size() < 2) throw InsufficientDataError("spearman: need at least 2 pairs");
  for (double v : a) if (std::isnan(v)) throw DomainError("spearman: NaN input");
  for (double v : b) if (std::isnan(v)) throw DomainError("spearman: NaN input");
  const std::vector<double> ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace dsd::metrics
