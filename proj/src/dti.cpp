#include "polyrbf/dti.hpp"

#include <atomic>
#include <cmath>

#include "polyrbf/parallel.hpp"

namespace polyrbf {

Eigen::Matrix3d DiffusionTensor::matrix() const {
  Eigen::Matrix3d m;
  m << dxx, dxy, dxz, dxy, dyy, dyz, dxz, dyz, dzz;
  return m;
}

Eigen::Vector3d DiffusionTensor::eigenvalues() const {
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(matrix(), Eigen::EigenvaluesOnly)
      .eigenvalues();
}

bool DiffusionTensor::has_negative_eigenvalue() const {
  return eigenvalues().minCoeff() < 0.0;
}

namespace {

Eigen::MatrixXd dti_design(const GradientScheme& scheme) {
  Eigen::MatrixXd x(scheme.size(), 7);
  for (std::size_t m = 0; m < scheme.size(); ++m) {
    const double b = scheme.b(m);
    const Eigen::Vector3d p = scheme.dir(m);
    x(m, 0) = 1.0;
    x(m, 1) = -b * p.x() * p.x();
    x(m, 2) = -b * p.y() * p.y();
    x(m, 3) = -b * p.z() * p.z();
    x(m, 4) = -2.0 * b * p.x() * p.y();
    x(m, 5) = -2.0 * b * p.x() * p.z();
    x(m, 6) = -2.0 * b * p.y() * p.z();
  }
  return x;
}

DiffusionTensor tensor_from_coefs(const Eigen::VectorXd& c) {
  DiffusionTensor d;
  d.log_s0 = c(0);
  d.dxx = c(1);
  d.dyy = c(2);
  d.dzz = c(3);
  d.dxy = c(4);
  d.dxz = c(5);
  d.dyz = c(6);
  return d;
}

Eigen::VectorXd wlls_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  // pass 1: ordinary least squares
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  const Eigen::VectorXd beta0 = qr.solve(y);
  // pass 2: reweight rows by the fitted signal S_hat (weight S_hat^2)
  const Eigen::VectorXd w = (x * beta0).array().exp();
  const Eigen::MatrixXd xw = w.asDiagonal() * x;
  const Eigen::VectorXd yw = w.cwiseProduct(y);
  return Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(xw).solve(yw);
}

} // namespace

DiffusionTensor fit_tensor_wlls(const GradientScheme& scheme,
                                const Eigen::VectorXd& normalized_signal) {
  if (static_cast<std::size_t>(normalized_signal.size()) != scheme.size())
    throw ValidationError("signal length does not match scheme length");
  if (scheme.size() < 7)
    throw UnidentifiableTensorError("tensor fit needs at least 7 frames, got " +
                                    std::to_string(scheme.size()));
  for (Eigen::Index i = 0; i < normalized_signal.size(); ++i)
    if (!(normalized_signal(i) > 0.0) || !std::isfinite(normalized_signal(i)))
      throw ValidationError("nonpositive or non-finite signal at frame " + std::to_string(i));

  const Eigen::MatrixXd x = dti_design(scheme);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < 7)
    throw UnidentifiableTensorError(
        "tensor design is rank-deficient (rank " + std::to_string(qr.rank()) +
        " of 7): directions must span 6 independent outer-products plus an intercept");

  const Eigen::VectorXd y = normalized_signal.array().log();
  return tensor_from_coefs(wlls_solve(x, y));
}

double md(const DiffusionTensor& d) { return d.eigenvalues().mean(); }

double fa(const DiffusionTensor& d) {
  const Eigen::Vector3d lam = d.eigenvalues();
  const double sumsq = lam.squaredNorm();
  if (sumsq == 0.0) return 0.0;
  const double mean = lam.mean();
  const double num = (lam.array() - mean).matrix().squaredNorm();
  const double v = std::sqrt(1.5 * num / sumsq);
  return lam.minCoeff() >= 0.0 ? std::min(v, 1.0) : v;
}

FeatureVolumes extract_features(const SignalVolume& volume, const GradientScheme& scheme,
                                int threads) {
  volume.validate();
  if (static_cast<int>(scheme.size()) != volume.m)
    throw ValidationError("scheme length does not match volume frames");

  // Rank condition depends only on the scheme; fail once, not per voxel.
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dti_design(scheme));
    qr.setThreshold(1e-10);
    if (scheme.size() < 7 || qr.rank() < 7)
      throw UnidentifiableTensorError("tensor design is rank-deficient for this scheme");
  }

  FeatureVolumes out;
  out.dims = volume.dims;
  out.mask = volume.mask;
  const auto nvox = volume.n_voxels();
  out.fa = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvox));
  out.md = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvox));

  std::atomic<std::int64_t> neg{0};
  parallel_for(nvox, threads, [&](std::size_t lo, std::size_t hi) {
    std::int64_t local_neg = 0;
    for (std::size_t v = lo; v < hi; ++v) {
      if (!volume.mask[v]) continue;
      const auto col = static_cast<Eigen::Index>(v);
      const DiffusionTensor d = fit_tensor_wlls(scheme, volume.data.col(col));
      out.fa(col) = fa(d);
      out.md(col) = md(d);
      if (d.has_negative_eigenvalue()) ++local_neg;
    }
    neg += local_neg;
  });
  out.negative_eig_voxels = neg.load();
  return out;
}

} // namespace polyrbf
