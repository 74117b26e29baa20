#include "polyrbf/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "polyrbf/errors.hpp"

namespace polyrbf {

double mse_log(const Eigen::VectorXd& predicted, const Eigen::VectorXd& observed) {
  if (predicted.size() != observed.size())
    throw ValidationError("mse_log length mismatch: " + std::to_string(predicted.size()) +
                          " vs " + std::to_string(observed.size()));
  if (predicted.size() == 0) throw ValidationError("mse_log on empty vectors");
  for (Eigen::Index i = 0; i < predicted.size(); ++i)
    if (!(predicted(i) > 0.0) || !(observed(i) > 0.0))
      throw ValidationError("mse_log requires positive values (entry " + std::to_string(i) + ")");
  return (predicted.array().log() - observed.array().log()).square().mean();
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double betacf(double a, double b, double x) {
  constexpr int max_iter = 500;
  constexpr double eps = 3e-16;
  constexpr double fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw InternalError("incomplete beta continued fraction did not converge");
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (x < 0.0 || x > 1.0) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("Student-t needs df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double half_tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

TTestResult paired_t_test(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ValidationError("paired t-test length mismatch");
  const auto n = a.size();
  if (n < 2) throw ValidationError("paired t-test needs n >= 2");
  const Eigen::VectorXd d = a - b;
  const double mean = d.mean();
  const double ss = (d.array() - mean).square().sum();
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  if (sd == 0.0) {
    if (mean == 0.0) return r;  // t = 0, p = 1
    r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(n - 1);
  r.p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + r.t * r.t));
  return r;
}

std::vector<std::int64_t> neglogp_threshold_counts(const std::vector<double>& p_map,
                                                   const std::vector<double>& thresholds) {
  std::vector<std::int64_t> counts(thresholds.size(), 0);
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    // -ln(p) > tau  <=>  p < exp(-tau)
    const double cutoff = std::exp(-thresholds[k]);
    for (double p : p_map)
      if (p < cutoff) ++counts[k];
  }
  return counts;
}

namespace {

double sample_variance(const std::vector<double>& v) {
  const auto n = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(n - 1);
}

} // namespace

IccResult icc(const std::vector<std::vector<double>>& per_subject_scans) {
  if (per_subject_scans.size() < 2) throw ValidationError("ICC needs at least 2 subjects");
  std::vector<double> pooled;
  double within = 0.0;
  for (const auto& scans : per_subject_scans) {
    if (scans.size() < 2)
      throw ValidationError("ICC needs at least 2 scans per subject");
    within += sample_variance(scans);
    pooled.insert(pooled.end(), scans.begin(), scans.end());
  }
  within /= static_cast<double>(per_subject_scans.size());
  const double total = sample_variance(pooled);

  IccResult r;
  if (total == 0.0) {
    r.undefined = true;
    r.value = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const double raw = 1.0 - within / total;
  r.value = std::clamp(raw, 0.0, 1.0);
  r.clipped = raw != r.value;
  return r;
}

namespace {

double voxel_icc(const std::vector<Eigen::VectorXd>& scans, const std::vector<int>& subject_of,
                 Eigen::Index v, int n_subjects) {
  std::vector<std::vector<double>> groups(n_subjects);
  for (std::size_t s = 0; s < scans.size(); ++s)
    groups[subject_of[s]].push_back(scans[s](v));
  const IccResult r = icc(groups);
  return r.undefined ? std::numeric_limits<double>::quiet_NaN() : r.value;
}

} // namespace

IccDifferenceMap icc_difference_map(const std::vector<Eigen::VectorXd>& original_scans,
                                    const std::vector<Eigen::VectorXd>& harmonized_scans,
                                    const std::vector<int>& subject_of,
                                    const std::vector<std::uint8_t>& mask,
                                    const std::vector<std::string>* region_of) {
  if (original_scans.size() != harmonized_scans.size() ||
      original_scans.size() != subject_of.size())
    throw ValidationError("scan list / subject manifest size mismatch");
  if (original_scans.empty()) throw ValidationError("no scans supplied");
  const Eigen::Index nvox = original_scans.front().size();
  for (const auto& s : original_scans)
    if (s.size() != nvox) throw ValidationError("scan feature-map sizes differ");
  for (const auto& s : harmonized_scans)
    if (s.size() != nvox) throw ValidationError("scan feature-map sizes differ");
  if (static_cast<Eigen::Index>(mask.size()) != nvox)
    throw ValidationError("mask size does not match feature maps");
  if (region_of && static_cast<Eigen::Index>(region_of->size()) != nvox)
    throw ValidationError("region label map size does not match feature maps");

  int n_subjects = 0;
  for (int s : subject_of) {
    if (s < 0) throw ValidationError("negative subject index");
    n_subjects = std::max(n_subjects, s + 1);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  IccDifferenceMap out;
  out.original_icc = Eigen::VectorXd::Constant(nvox, nan);
  out.harmonized_icc = Eigen::VectorXd::Constant(nvox, nan);
  out.diff = Eigen::VectorXd::Constant(nvox, nan);

  std::int64_t comparable = 0, improved = 0, nonties = 0;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> region_counts;
  for (Eigen::Index v = 0; v < nvox; ++v) {
    if (!mask[v]) continue;
    const double io = voxel_icc(original_scans, subject_of, v, n_subjects);
    const double ih = voxel_icc(harmonized_scans, subject_of, v, n_subjects);
    out.original_icc(v) = io;
    out.harmonized_icc(v) = ih;
    if (std::isnan(io) || std::isnan(ih)) continue;
    const double d = ih - io;
    out.diff(v) = d;
    ++comparable;
    if (d > 0.0) ++improved;
    if (d != 0.0) ++nonties;
    if (region_of) {
      auto& [tot, imp] = region_counts[(*region_of)[v]];
      ++tot;
      if (d > 0.0) ++imp;
    }
  }
  out.improved_fraction =
      comparable > 0 ? static_cast<double>(improved) / static_cast<double>(comparable) : 0.0;
  out.all_ties = comparable > 0 && nonties == 0;
  for (const auto& [label, counts] : region_counts)
    out.per_region[label] =
        counts.first > 0 ? static_cast<double>(counts.second) / static_cast<double>(counts.first)
                         : 0.0;
  return out;
}

std::vector<double> quantiles(std::vector<double> values, const std::vector<double>& probs) {
  if (values.empty()) throw ValidationError("quantiles of an empty sample");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(probs.size());
  for (double q : probs) {
    if (q < 0.0 || q > 1.0) throw ValidationError("quantile probability outside [0, 1]");
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(values[lo] + frac * (values[hi] - values[lo]));
  }
  return out;
}

} // namespace polyrbf
