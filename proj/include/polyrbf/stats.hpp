#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace polyrbf {

// Mean squared difference of natural logs, pooled over all pairs.
double mse_log(const Eigen::VectorXd& predicted, const Eigen::VectorXd& observed);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
// P(T <= t) for Student-t with df degrees of freedom.
double student_t_cdf(double t, double df);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero spread with nonzero mean difference
};

// Paired two-sided t-test on differences a - b (sample sd, n-1 denominator).
TTestResult paired_t_test(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Counts of entries with -ln(p) > tau for each threshold tau.
std::vector<std::int64_t> neglogp_threshold_counts(const std::vector<double>& p_map,
                                                   const std::vector<double>& thresholds);

struct IccResult {
  double value = 0.0;
  bool clipped = false;    // raw ratio fell outside [0, 1]
  bool undefined = false;  // zero total variance; value is NaN
};

// ICC = 1 - within/total; within = mean per-subject sample variance across
// scans, total = pooled sample variance of all measurements.
IccResult icc(const std::vector<std::vector<double>>& per_subject_scans);

struct IccDifferenceMap {
  Eigen::VectorXd original_icc;    // per voxel, NaN where undefined
  Eigen::VectorXd harmonized_icc;  // per voxel
  Eigen::VectorXd diff;            // harmonized - original
  double improved_fraction = 0.0;  // voxels with diff > 0 / comparable voxels
  bool all_ties = false;
  std::map<std::string, double> per_region;  // improved fraction by label
};

// scans: one feature vector (per-voxel) per scan; subject_of[i] groups scans
// into subjects. Voxels where either ICC is undefined are excluded.
IccDifferenceMap icc_difference_map(const std::vector<Eigen::VectorXd>& original_scans,
                                    const std::vector<Eigen::VectorXd>& harmonized_scans,
                                    const std::vector<int>& subject_of,
                                    const std::vector<std::uint8_t>& mask,
                                    const std::vector<std::string>* region_of = nullptr);

// Type-7 (linear interpolation) quantiles of a sample.
std::vector<double> quantiles(std::vector<double> values, const std::vector<double>& probs);

} // namespace polyrbf
