#include "polyrbf/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "polyrbf/errors.hpp"
#include "polyrbf/parallel.hpp"
#include "polyrbf/rng.hpp"

namespace polyrbf {

double default_ridge(const Eigen::MatrixXd& x) {
  if (x.cols() == 0) throw ValidationError("design matrix has no columns");
  // mean(diag(X'X)) = mean squared column norm
  return 1e-8 * x.squaredNorm() / static_cast<double>(x.cols());
}

Projector build_projector(const DesignMatrix& design, double ridge_d) {
  const Eigen::MatrixXd& x = design.x;
  if (x.rows() < 1) throw ValidationError("design matrix must have at least one row");
  if (ridge_d < 0.0) ridge_d = default_ridge(x);

  if (ridge_d == 0.0) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x);
    const auto& sv = svd.singularValues();
    const double thresh = sv.size() ? sv(0) * 1e-10 : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > thresh) ++rank;
    if (rank < x.cols()) {
      const auto deficient = static_cast<int>(x.cols() - rank);
      std::ostringstream msg;
      msg << "design matrix is singular at d = 0: rank " << rank << " of " << x.cols()
          << " columns (" << deficient << " deficient dimensions); supply d > 0";
      throw RankDeficiencyError(msg.str(), deficient);
    }
  }

  Eigen::MatrixXd a = x.transpose() * x;
  a.diagonal().array() += ridge_d;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw InternalError("normal-equation factorization failed");

  Projector proj;
  proj.p = ldlt.solve(x.transpose());
  proj.x = x;
  proj.ridge_d = ridge_d;
  proj.scheme_fingerprint = design.scheme_fingerprint;
  proj.config_fingerprint = design.config_fingerprint;
  if (!proj.p.allFinite()) throw InternalError("projector has non-finite entries");
  return proj;
}

VoxelFit fit_voxel(const Projector& projector, const Eigen::VectorXd& log_signal) {
  if (log_signal.size() != projector.x.rows())
    throw ValidationError("log-signal length " + std::to_string(log_signal.size()) +
                          " does not match design rows " + std::to_string(projector.x.rows()));
  if (!log_signal.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite log-signal at frame(s)";
    int shown = 0;
    for (Eigen::Index i = 0; i < log_signal.size() && shown < 8; ++i)
      if (!std::isfinite(log_signal(i))) {
        msg << ' ' << i;
        ++shown;
      }
    throw ValidationError(msg.str());
  }
  VoxelFit fit;
  fit.beta = projector.p * log_signal;
  fit.n_obs = static_cast<int>(log_signal.size());
  const Eigen::VectorXd resid = log_signal - projector.x * fit.beta;
  const auto dof = std::max<Eigen::Index>(projector.x.rows() - projector.x.cols(), 1);
  fit.residual_variance = resid.squaredNorm() / static_cast<double>(dof);
  return fit;
}

FitVolume fit_volume(const Projector& projector, const SignalVolume& normalized,
                     const BasisConfig& cfg, double train_max_b, int threads) {
  normalized.validate();
  if (!normalized.normalized)
    throw ValidationError("fit_volume requires a b0-normalized volume");
  if (normalized.scheme_fingerprint != projector.scheme_fingerprint)
    throw ProtocolMismatchError("volume scheme fingerprint does not match the projector's");
  if (cfg.fingerprint() != projector.config_fingerprint)
    throw ProtocolMismatchError("basis config fingerprint does not match the projector's");
  if (normalized.m != projector.x.rows())
    throw ValidationError("volume frame count does not match design rows");

  FitVolume out;
  out.dims = normalized.dims;
  out.mask = normalized.mask;
  out.config = cfg;
  out.scheme_fingerprint = projector.scheme_fingerprint;
  out.train_max_b = train_max_b;
  out.n_obs = normalized.m;
  for (std::size_t v = 0; v < normalized.n_voxels(); ++v)
    if (normalized.mask[v]) out.voxels.push_back(v);

  const auto nk = projector.x.cols();
  const auto nvox = out.voxels.size();
  out.betas.resize(nk, static_cast<Eigen::Index>(nvox));
  out.residual_variance.resize(static_cast<Eigen::Index>(nvox));
  const auto dof = std::max<Eigen::Index>(projector.x.rows() - nk, 1);

  std::vector<std::string> errors(nvox);
  parallel_for(nvox, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto col = static_cast<Eigen::Index>(out.voxels[i]);
      const Eigen::VectorXd y = normalized.data.col(col).array().log().matrix();
      if (!y.allFinite()) {
        errors[i] = "voxel " + std::to_string(out.voxels[i]) + " has non-finite log-signal";
        continue;
      }
      const Eigen::VectorXd beta = projector.p * y;
      out.betas.col(static_cast<Eigen::Index>(i)) = beta;
      const Eigen::VectorXd resid = y - projector.x * beta;
      out.residual_variance(static_cast<Eigen::Index>(i)) =
          resid.squaredNorm() / static_cast<double>(dof);
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw ValidationError(e);
  return out;
}

namespace {

// Round-robin fold assignment within each distinct-b group so every fold
// sees every b-value.
std::vector<int> stratified_folds(const GradientScheme& scheme, int folds,
                                  std::uint64_t seed) {
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < scheme.size(); ++i) groups[scheme.b(i)].push_back(i);

  CounterRng rng(seed, "cv-folds");
  std::vector<int> fold_of(scheme.size(), -1);
  std::uint64_t base = 0;
  for (auto& [b, idx] : groups) {
    (void)b;
    rng.shuffle(idx, base);
    base += 1u << 20;
    for (std::size_t pos = 0; pos < idx.size(); ++pos)
      fold_of[idx[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));
  }
  return fold_of;
}

} // namespace

OrderSelection select_order(const GradientScheme& scheme, const Eigen::MatrixXd& log_signals,
                            const std::vector<int>& k_candidates, int folds,
                            std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation requires at least 2 folds");
  if (static_cast<std::size_t>(log_signals.rows()) != scheme.size())
    throw ValidationError("signal rows " + std::to_string(log_signals.rows()) +
                          " do not match scheme length " + std::to_string(scheme.size()));
  if (log_signals.cols() < 1) throw ValidationError("no voxels supplied to select_order");
  if (k_candidates.empty()) throw ValidationError("empty order candidate list");

  const int s = static_cast<int>(scheme.shells().size());
  std::vector<int> cands(k_candidates);
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

  OrderSelection sel;
  std::vector<int> admissible;
  for (int k : cands) {
    if (k < 1) throw ValidationError("polynomial order must be >= 1, got " + std::to_string(k));
    // A degree-K polynomial in b (no intercept) needs K distinct nonzero
    // b-values to be identifiable, so K <= s is admissible.
    if (k > s)
      sel.skipped.push_back(k);
    else
      admissible.push_back(k);
  }
  if (!sel.skipped.empty()) {
    std::ostringstream w;
    w << "skipped order candidate(s)";
    for (int k : sel.skipped) w << " K=" << k;
    w << ": unidentifiable with " << s << " distinct nonzero b-value(s)";
    sel.warning = w.str();
  }
  if (admissible.empty())
    throw ValidationError("no admissible polynomial order: largest identifiable order is " +
                          std::to_string(s));

  const std::vector<int> fold_of = stratified_folds(scheme, folds, seed);
  const int max_k = *std::max_element(admissible.begin(), admissible.end());
  if (max_k >= 2) {
    for (int f = 0; f < folds; ++f) {
      std::set<double> train_b;
      for (std::size_t i = 0; i < scheme.size(); ++i)
        if (fold_of[i] != f && scheme.b(i) > 0.0) train_b.insert(scheme.b(i));
      if (train_b.size() < 2)
        throw ValidationError("fold " + std::to_string(f) +
                              " training part spans fewer than 2 distinct b-values");
    }
  }

  const double b_scale = scheme.max_b();
  double best = std::numeric_limits<double>::infinity();
  for (int k : admissible) {
    BasisConfig cfg = BasisConfig::make_default(10, k);
    cfg.b_scale = b_scale;
    const DesignMatrix design = design_matrix(scheme, cfg);

    double loss_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (std::size_t i = 0; i < scheme.size(); ++i)
        (fold_of[i] == f ? te : tr).push_back(static_cast<Eigen::Index>(i));
      if (te.empty()) continue;
      Eigen::MatrixXd x_tr(tr.size(), design.x.cols()), x_te(te.size(), design.x.cols());
      Eigen::MatrixXd y_tr(tr.size(), log_signals.cols()), y_te(te.size(), log_signals.cols());
      for (std::size_t r = 0; r < tr.size(); ++r) {
        x_tr.row(static_cast<Eigen::Index>(r)) = design.x.row(tr[r]);
        y_tr.row(static_cast<Eigen::Index>(r)) = log_signals.row(tr[r]);
      }
      for (std::size_t r = 0; r < te.size(); ++r) {
        x_te.row(static_cast<Eigen::Index>(r)) = design.x.row(te[r]);
        y_te.row(static_cast<Eigen::Index>(r)) = log_signals.row(te[r]);
      }
      Eigen::MatrixXd a = x_tr.transpose() * x_tr;
      a.diagonal().array() += default_ridge(x_tr);
      const Eigen::MatrixXd betas = Eigen::LDLT<Eigen::MatrixXd>(a).solve(x_tr.transpose() * y_tr);
      const Eigen::MatrixXd resid = y_te - x_te * betas;
      loss_sum += resid.squaredNorm() /
                  static_cast<double>(resid.rows() * resid.cols());
    }
    const double loss = loss_sum / static_cast<double>(folds);
    sel.cv_loss[k] = loss;
    if (loss < best) {
      best = loss;
      sel.k = k;
    }
  }
  return sel;
}

IcResult information_criterion(const VoxelFit& fit, int m, Criterion which) {
  if (m < 1) throw ValidationError("information criterion needs M >= 1");
  if (fit.residual_variance < 0.0)
    throw ValidationError("negative residual variance");
  const auto nk = static_cast<int>(fit.beta.size());
  const double rss =
      fit.residual_variance * static_cast<double>(std::max(m - nk, 1));
  IcResult r;
  if (rss <= 1e-300) {
    r.perfect_fit = true;
    r.value = -std::numeric_limits<double>::infinity();
    return r;
  }
  const double penalty = (which == Criterion::aic)
                             ? 2.0 * nk
                             : std::log(static_cast<double>(m)) * nk;
  r.value = m * std::log(rss / m) + penalty;
  return r;
}

} // namespace polyrbf
