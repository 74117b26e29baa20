#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace polyrbf {

// Location-scale batch-effect model with parametric empirical-Bayes shrinkage
// of per-batch means (normal prior) and variances (inverse-gamma prior).
struct CombatModel {
  std::vector<std::string> batch_names;  // first-appearance order
  Eigen::VectorXd alpha;                 // grand mean per feature
  Eigen::VectorXd var_pooled;            // pooled variance per feature
  Eigen::MatrixXd gamma_star;            // batches x features, shrunk locations
  Eigen::MatrixXd delta2_star;           // batches x features, shrunk scales (> 0)
  Eigen::MatrixXd cov_coefs;             // covariates x features
  std::vector<std::uint8_t> zero_variance;  // features passed through unchanged
  bool eb = true;
  bool single_batch = false;
  std::string warning;
};

// features: samples x features; batches: one label per sample; covariates:
// optional samples x c design regressed out before standardization.
CombatModel fit_combat(const Eigen::MatrixXd& features,
                       const std::vector<std::string>& batches,
                       const Eigen::MatrixXd* covariates = nullptr, bool eb = true);

Eigen::MatrixXd apply_combat(const CombatModel& model, const Eigen::MatrixXd& features,
                             const std::vector<std::string>& batches,
                             const Eigen::MatrixXd* covariates = nullptr);

} // namespace polyrbf
