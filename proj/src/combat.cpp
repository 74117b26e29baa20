#include "polyrbf/combat.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "polyrbf/errors.hpp"

namespace polyrbf {

namespace {

std::vector<int> batch_indices(const std::vector<std::string>& batches,
                               std::vector<std::string>& names) {
  std::map<std::string, int> id;
  std::vector<int> idx(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    auto [it, inserted] = id.try_emplace(batches[i], static_cast<int>(names.size()));
    if (inserted) names.push_back(batches[i]);
    idx[i] = it->second;
  }
  return idx;
}

// Standardized mean per sample: alpha + covariate effects.
Eigen::MatrixXd stand_mean(const CombatModel& m, const Eigen::MatrixXd* covariates,
                           Eigen::Index n) {
  Eigen::MatrixXd sm = m.alpha.transpose().replicate(n, 1);
  if (m.cov_coefs.rows() > 0) {
    if (!covariates)
      throw ValidationError("model was fit with covariates; covariates required");
    if (covariates->rows() != n || covariates->cols() != m.cov_coefs.rows())
      throw ValidationError("covariate design shape mismatch");
    sm += *covariates * m.cov_coefs;
  }
  return sm;
}

} // namespace

CombatModel fit_combat(const Eigen::MatrixXd& features, const std::vector<std::string>& batches,
                       const Eigen::MatrixXd* covariates, bool eb) {
  const Eigen::Index n = features.rows(), g = features.cols();
  if (n < 2 || g < 1) throw ValidationError("ComBat needs >= 2 samples and >= 1 feature");
  if (static_cast<Eigen::Index>(batches.size()) != n)
    throw ValidationError("batch label count does not match sample count");
  if (!features.allFinite()) throw ValidationError("non-finite feature values");

  CombatModel model;
  model.eb = eb;
  const std::vector<int> idx = batch_indices(batches, model.batch_names);
  const auto nb = static_cast<Eigen::Index>(model.batch_names.size());

  if (nb == 1) {
    model.single_batch = true;
    model.warning = "single batch: ComBat is a no-op";
    return model;
  }
  std::vector<Eigen::Index> counts(nb, 0);
  for (int b : idx) ++counts[b];
  for (Eigen::Index b = 0; b < nb; ++b)
    if (counts[b] < 2)
      throw ValidationError("batch '" + model.batch_names[b] + "' has fewer than 2 samples");

  const Eigen::Index c = covariates ? covariates->cols() : 0;
  if (covariates && covariates->rows() != n)
    throw ValidationError("covariate rows do not match sample count");

  // Joint location model: batch indicators plus covariates.
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, nb + c);
  for (Eigen::Index i = 0; i < n; ++i) design(i, idx[i]) = 1.0;
  if (c > 0) design.rightCols(c) = *covariates;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols())
    throw ValidationError("covariate design is collinear with batch indicators");
  const Eigen::MatrixXd b_hat = qr.solve(features);  // (nb + c) x g

  model.alpha = Eigen::VectorXd::Zero(g);
  for (Eigen::Index b = 0; b < nb; ++b)
    model.alpha += (static_cast<double>(counts[b]) / static_cast<double>(n)) *
                   b_hat.row(b).transpose();
  model.cov_coefs = c > 0 ? b_hat.bottomRows(c) : Eigen::MatrixXd(0, g);

  const Eigen::MatrixXd resid = features - design * b_hat;
  model.var_pooled = resid.array().square().colwise().sum().transpose() /
                     static_cast<double>(n);

  model.zero_variance.assign(static_cast<std::size_t>(g), 0);
  std::vector<Eigen::Index> active;
  for (Eigen::Index f = 0; f < g; ++f) {
    // Relative floor: QR residuals on a constant feature leave rounding dust
    // instead of exact zeros, and dividing by that would blow up.
    const double mean_sq = features.col(f).squaredNorm() / static_cast<double>(n);
    if (model.var_pooled(f) <= 1e-24 * mean_sq) {
      model.zero_variance[f] = 1;
      model.var_pooled(f) = 1.0;  // neutral; feature passes through on apply
    } else {
      active.push_back(f);
    }
  }
  if (active.size() < static_cast<std::size_t>(g))
    model.warning = std::to_string(g - static_cast<Eigen::Index>(active.size())) +
                    " zero-variance feature(s) pass through unchanged";

  const Eigen::MatrixXd sm = stand_mean(model, covariates, n);
  const Eigen::ArrayXd sd = model.var_pooled.array().sqrt();
  Eigen::MatrixXd z = features - sm;
  for (Eigen::Index f = 0; f < g; ++f) z.col(f) /= sd(f);

  Eigen::MatrixXd gamma_hat = Eigen::MatrixXd::Zero(nb, g);
  Eigen::MatrixXd delta_hat2 = Eigen::MatrixXd::Ones(nb, g);
  for (Eigen::Index b = 0; b < nb; ++b) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(g);
    for (Eigen::Index i = 0; i < n; ++i)
      if (idx[i] == b) mean += z.row(i).transpose();
    mean /= static_cast<double>(counts[b]);
    gamma_hat.row(b) = mean.transpose();
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(g);
    for (Eigen::Index i = 0; i < n; ++i)
      if (idx[i] == b) ss += (z.row(i).transpose() - mean).array().square().matrix();
    delta_hat2.row(b) = (ss / static_cast<double>(counts[b] - 1)).transpose();
  }

  model.gamma_star = gamma_hat;
  model.delta2_star = delta_hat2;

  const bool eb_feasible = eb && active.size() >= 2;
  if (eb && !eb_feasible)
    model.warning += (model.warning.empty() ? "" : "; ") +
                     std::string("EB disabled: needs >= 2 usable features");

  if (eb_feasible) {
    const auto na = static_cast<Eigen::Index>(active.size());
    for (Eigen::Index b = 0; b < nb; ++b) {
      // Moment-matched hyperpriors over features (active ones only).
      double g_sum = 0.0, d_sum = 0.0;
      for (Eigen::Index f : active) {
        g_sum += gamma_hat(b, f);
        d_sum += delta_hat2(b, f);
      }
      const double g_bar = g_sum / na, d_bar = d_sum / na;
      double t2 = 0.0, s2 = 0.0;
      for (Eigen::Index f : active) {
        t2 += (gamma_hat(b, f) - g_bar) * (gamma_hat(b, f) - g_bar);
        s2 += (delta_hat2(b, f) - d_bar) * (delta_hat2(b, f) - d_bar);
      }
      t2 /= static_cast<double>(na - 1);
      s2 /= static_cast<double>(na - 1);
      if (s2 <= 0.0 || t2 <= 0.0) continue;  // degenerate spread: keep raw estimates
      const double aprior = (2.0 * s2 + d_bar * d_bar) / s2;
      const double bprior = (d_bar * s2 + d_bar * d_bar * d_bar) / s2;
      const double nbatch = static_cast<double>(counts[b]);

      Eigen::VectorXd g_old(na), d_old(na);
      for (Eigen::Index j = 0; j < na; ++j) {
        g_old(j) = gamma_hat(b, active[j]);
        d_old(j) = delta_hat2(b, active[j]);
      }
      Eigen::VectorXd g_new(na), d_new(na);
      for (int it = 0; it < 200; ++it) {
        for (Eigen::Index j = 0; j < na; ++j) {
          const Eigen::Index f = active[j];
          g_new(j) = (nbatch * t2 * gamma_hat(b, f) + d_old(j) * g_bar) /
                     (nbatch * t2 + d_old(j));
          double sum2 = 0.0;
          for (Eigen::Index i = 0; i < n; ++i)
            if (idx[i] == b) {
              const double r = z(i, f) - g_new(j);
              sum2 += r * r;
            }
          d_new(j) = (0.5 * sum2 + bprior) / (0.5 * nbatch + aprior - 1.0);
        }
        double change = 0.0;
        for (Eigen::Index j = 0; j < na; ++j) {
          change = std::max(change,
                            std::abs(g_new(j) - g_old(j)) / (std::abs(g_old(j)) + 1e-300));
          change = std::max(change,
                            std::abs(d_new(j) - d_old(j)) / (std::abs(d_old(j)) + 1e-300));
        }
        g_old = g_new;
        d_old = d_new;
        if (change < 1e-6) break;
      }
      for (Eigen::Index j = 0; j < na; ++j) {
        model.gamma_star(b, active[j]) = g_old(j);
        model.delta2_star(b, active[j]) = d_old(j);
      }
    }
  }

  // Zero-variance features: forced neutral adjustment.
  for (Eigen::Index f = 0; f < g; ++f)
    if (model.zero_variance[f]) {
      model.gamma_star.col(f).setZero();
      model.delta2_star.col(f).setOnes();
    }
  return model;
}

Eigen::MatrixXd apply_combat(const CombatModel& model, const Eigen::MatrixXd& features,
                             const std::vector<std::string>& batches,
                             const Eigen::MatrixXd* covariates) {
  const Eigen::Index n = features.rows(), g = features.cols();
  if (static_cast<Eigen::Index>(batches.size()) != n)
    throw ValidationError("batch label count does not match sample count");
  if (model.single_batch) return features;
  if (features.cols() != model.alpha.size())
    throw ValidationError("feature count does not match the fitted model");

  std::map<std::string, int> id;
  for (std::size_t b = 0; b < model.batch_names.size(); ++b)
    id[model.batch_names[b]] = static_cast<int>(b);
  std::vector<int> idx(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    auto it = id.find(batches[i]);
    if (it == id.end()) throw ValidationError("unseen batch label: " + batches[i]);
    idx[i] = it->second;
  }

  const Eigen::MatrixXd sm = stand_mean(model, covariates, n);
  const Eigen::ArrayXd sd = model.var_pooled.array().sqrt();
  Eigen::MatrixXd out(n, g);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int b = idx[i];
    for (Eigen::Index f = 0; f < g; ++f) {
      if (model.zero_variance[f]) {
        out(i, f) = features(i, f);
        continue;
      }
      const double z = (features(i, f) - sm(i, f)) / sd(f);
      const double adj = (z - model.gamma_star(b, f)) / std::sqrt(model.delta2_star(b, f));
      out(i, f) = adj * sd(f) + sm(i, f);
    }
  }
  return out;
}

} // namespace polyrbf
