#include "polyrbf/predictor.hpp"

#include <cmath>
#include <sstream>

#include "polyrbf/errors.hpp"
#include "polyrbf/parallel.hpp"

namespace polyrbf {

double predict_log(const VoxelFit& fit, const BasisConfig& cfg, double b,
                   const Eigen::Vector3d& p) {
  if (b == 0.0) return 0.0;
  const Eigen::VectorXd row = design_row(b, p, cfg);
  if (row.size() != fit.beta.size())
    throw ValidationError("coefficient length " + std::to_string(fit.beta.size()) +
                          " does not match basis size " + std::to_string(row.size()));
  return row.dot(fit.beta);
}

double predict_signal(const VoxelFit& fit, const BasisConfig& cfg, double b,
                      const Eigen::Vector3d& p) {
  if (b == 0.0) return 1.0;
  return std::exp(predict_log(fit, cfg, b, p));
}

ResampleResult resample_volume(const FitVolume& fits, const GradientScheme& target,
                               bool allow_extrapolation, int threads) {
  if (target.size() == 0) throw ValidationError("empty target scheme");

  ResampleResult out;
  out.report.train_max_b = fits.train_max_b;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target.b(i) > fits.train_max_b) {
      out.report.flagged_frames.push_back(static_cast<int>(i));
      out.report.worst_b = std::max(out.report.worst_b, target.b(i));
    }
  if (!out.report.flagged_frames.empty()) {
    std::ostringstream msg;
    msg << out.report.flagged_frames.size() << " target frame(s) exceed the training maximum b="
        << fits.train_max_b << " (worst b=" << out.report.worst_b
        << ", first frame " << out.report.flagged_frames.front() << ")";
    if (!allow_extrapolation)
      throw ExtrapolationError("extrapolation refused: " + msg.str());
    out.report.allowed = true;
    out.report.warning = "extrapolating: " + msg.str();
  }

  const DesignMatrix target_design = design_matrix(target, fits.config);

  SignalVolume& vol = out.volume;
  vol.dims = fits.dims;
  vol.m = static_cast<int>(target.size());
  vol.mask = fits.mask;
  vol.normalized = true;
  vol.scheme_fingerprint = target.fingerprint();
  vol.data = Eigen::MatrixXd::Ones(vol.m, static_cast<Eigen::Index>(vol.n_voxels()));

  parallel_for(fits.voxels.size(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto col = static_cast<Eigen::Index>(fits.voxels[i]);
      vol.data.col(col) =
          (target_design.x * fits.betas.col(static_cast<Eigen::Index>(i))).array().exp();
    }
  });
  return out;
}

double baseline_predict(const GradientScheme& scheme, const Eigen::VectorXd& signals,
                        double b, const Eigen::Vector3d& p) {
  if (scheme.size() == 0) throw ValidationError("baseline_predict needs a nonempty scheme");
  if (static_cast<std::size_t>(signals.size()) != scheme.size())
    throw ValidationError("signal length does not match scheme length");

  // Nearest shell by |b - b_train|; ties go to the lower b.
  double best_dist = -1.0, shell_b = 0.0;
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const double d = std::abs(scheme.b(i) - b);
    if (best_dist < 0.0 || d < best_dist ||
        (d == best_dist && scheme.b(i) < shell_b)) {
      best_dist = d;
      shell_b = scheme.b(i);
    }
  }

  // Antipodally-aware nearest direction on that shell; ties by lowest index.
  double best_dot = -1.0;
  Eigen::Index best_frame = -1;
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    if (scheme.b(i) != shell_b) continue;
    const double a = std::abs(p.dot(scheme.dir(i)));
    if (a > best_dot) {
      best_dot = a;
      best_frame = static_cast<Eigen::Index>(i);
    }
  }
  return signals(best_frame);
}

} // namespace polyrbf
