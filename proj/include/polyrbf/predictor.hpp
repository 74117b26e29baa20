#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "polyrbf/estimator.hpp"

namespace polyrbf {

// Log-signal prediction at one (b, p): design_row(b, p, cfg) . beta.
double predict_log(const VoxelFit& fit, const BasisConfig& cfg, double b,
                   const Eigen::Vector3d& p);
// exp(predict_log); strictly positive, exactly 1 at b = 0.
double predict_signal(const VoxelFit& fit, const BasisConfig& cfg, double b,
                      const Eigen::Vector3d& p);

struct ExtrapolationReport {
  std::vector<int> flagged_frames;  // target frames with b above the training max
  double train_max_b = 0.0;
  double worst_b = 0.0;
  bool allowed = false;
  std::string warning;
};

struct ResampleResult {
  SignalVolume volume;  // predicted signals on the target scheme
  ExtrapolationReport report;
};

// Evaluates every masked voxel's fit on the target scheme. Target b-values
// above the training maximum raise ExtrapolationError unless
// allow_extrapolation is set, which downgrades the refusal to a warning.
ResampleResult resample_volume(const FitVolume& fits, const GradientScheme& target,
                               bool allow_extrapolation = false, int threads = 1);

// Antipodally-aware nearest-neighbor comparator: the training value on the
// shell nearest to b whose direction maximizes |p . p_train|.
double baseline_predict(const GradientScheme& scheme, const Eigen::VectorXd& signals,
                        double b, const Eigen::Vector3d& p);

} // namespace polyrbf
