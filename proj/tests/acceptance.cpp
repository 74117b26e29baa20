// Acceptance gate. Each invocation checks one numbered criterion and prints a
// single PASS/FAIL line; exit status 0 iff the criterion holds. Criterion 10
// additionally drives the installed CLI binary (path in argv[2]).
#include <unistd.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "polyrbf/basis.hpp"
#include "polyrbf/combat.hpp"
#include "polyrbf/dti.hpp"
#include "polyrbf/errors.hpp"
#include "polyrbf/estimator.hpp"
#include "polyrbf/gradients.hpp"
#include "polyrbf/nifti.hpp"
#include "polyrbf/phantom.hpp"
#include "polyrbf/pipeline.hpp"
#include "polyrbf/predictor.hpp"
#include "polyrbf/rng.hpp"
#include "polyrbf/stats.hpp"
#include "polyrbf/volume.hpp"

namespace {

using namespace polyrbf;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[768];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Axially symmetric tensor l_perp*I + (l_par - l_perp) e e'.
Eigen::Matrix3d axial_tensor(double l_par, double l_perp, const Eigen::Vector3d& e) {
  return l_perp * Eigen::Matrix3d::Identity() + (l_par - l_perp) * e * e.transpose();
}

Eigen::Vector3d random_unit(const CounterRng& rng, std::uint64_t& c) {
  Eigen::Vector3d p;
  for (int i = 0; i < 3; ++i) p(i) = rng.gaussian(c++);
  p.normalize();
  return p;
}

// ---------------------------------------------------------------------------
// 1. Folded design row equals the explicit double sum over mirrored centers.

Outcome criterion1() {
  const CounterRng rng(101, "acceptance-1");
  std::uint64_t c = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 4 + static_cast<int>(rng.bits(c++) % 9);
    const int k = 1 + static_cast<int>(rng.bits(c++) % 4);
    BasisConfig cfg = BasisConfig::make_default(n, k);
    cfg.b_scale = 500.0 + 3000.0 * rng.uniform(c++);
    cfg.taper_mult = 2.0 + 2.0 * rng.uniform(c++);
    const double b = (trial % 10 == 0) ? 0.0 : cfg.b_scale * (0.1 + 1.2 * rng.uniform(c++));
    const Eigen::Vector3d p = random_unit(rng, c);
    Eigen::VectorXd beta(n * k);
    for (int i = 0; i < n * k; ++i) beta(i) = rng.gaussian(c++);

    const double folded = design_row(b, p, cfg).dot(beta);
    double unfolded = 0.0;
    for (int kk = 1; kk <= k; ++kk) {
      const double bp = std::pow(b / cfg.b_scale, kk);
      for (int j = 0; j < 2 * n; ++j)
        unfolded += bp * kernel(p, cfg.centers.col(j), cfg.h, cfg.taper_mult) *
                    beta((kk - 1) * n + j % n);
    }
    worst = std::max(worst, std::abs(folded - unfolded));
  }
  return {worst <= 1e-12, fmt("max |folded - double sum| = %.3e over 1000 draws (tol 1e-12)", worst)};
}

// ---------------------------------------------------------------------------
// 2. Exact antipodal symmetry and exact unit signal at b = 0.

Outcome criterion2() {
  const CounterRng rng(202, "acceptance-2");
  std::uint64_t c = 0;
  int asym = 0, miscal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 4 + static_cast<int>(rng.bits(c++) % 9);
    const int k = 1 + static_cast<int>(rng.bits(c++) % 4);
    BasisConfig cfg = BasisConfig::make_default(n, k);
    cfg.b_scale = 800.0 + 2500.0 * rng.uniform(c++);
    const double b = cfg.b_scale * 1.3 * rng.uniform(c++);
    const Eigen::Vector3d p = random_unit(rng, c);
    VoxelFit fit;
    fit.beta.resize(n * k);
    for (int i = 0; i < n * k; ++i) fit.beta(i) = rng.gaussian(c++);

    if (predict_log(fit, cfg, b, p) != predict_log(fit, cfg, b, -p)) ++asym;
    if (predict_signal(fit, cfg, 0.0, p) != 1.0) ++miscal;
  }
  return {asym == 0 && miscal == 0,
          fmt("%d/1000 antipodal mismatches, %d/1000 draws with S(0) != 1 (both must be 0)",
              asym, miscal)};
}

// ---------------------------------------------------------------------------
// 3. Planted-coefficient recovery on the 3x30 three-shell design at N=10, K=4.

Outcome criterion3() {
  const GradientScheme scheme = multi_shell_scheme({1000.0, 2000.0, 3000.0}, 30, 0);
  BasisConfig cfg = BasisConfig::make_default(10, 4);
  cfg.b_scale = scheme.max_b();
  const DesignMatrix design = design_matrix(scheme, cfg);

  const CounterRng rng(303, "acceptance-3");
  Eigen::VectorXd beta_star(40);
  for (int i = 0; i < 40; ++i) beta_star(i) = rng.gaussian(i);
  const Eigen::VectorXd y = design.x * beta_star;

  const Eigen::MatrixXd xtx = design.x.transpose() * design.x;
  const double d = 1e-12 * xtx.diagonal().mean();
  const Projector proj = build_projector(design, d);
  const double err = (proj.p * y - beta_star).lpNorm<Eigen::Infinity>();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(design.x);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > sv(0) * 1e-10) ++rank;

  // Solver sanity on a generic full-rank design with the same ridge rule
  // (reported only; the gate above is what counts).
  Eigen::MatrixXd xr(80, 40);
  for (int i = 0; i < 80; ++i)
    for (int j = 0; j < 40; ++j) xr(i, j) = rng.gaussian(1000 + 40 * i + j);
  DesignMatrix rnd;
  rnd.x = xr;
  const Projector proj_rnd =
      build_projector(rnd, 1e-12 * (xr.transpose() * xr).diagonal().mean());
  const double err_rnd = (proj_rnd.p * (xr * beta_star) - beta_star).lpNorm<Eigen::Infinity>();

  return {err <= 1e-8,
          fmt("max|beta_hat - beta*| = %.3e (tol 1e-8) at ridge d = %.3e; three-shell design "
              "rank %d/40, sigma_min/sigma_max = %.3e/%.3e; full-rank sanity err = %.3e",
              err, d, rank, sv(sv.size() - 1), sv(0), err_rnd)};
}

// ---------------------------------------------------------------------------
// 4. Held-out prediction on a 16^3 phantom beats the nearest-frame baseline
//    for all six subsampling protocols in all five replications, and stays
//    below a frozen absolute ceiling.

// Frozen after the first run of this benchmark: ~30% above the worst held-out
// log-MSE observed there (0.14689, dominated by the log-domain noise floor of
// the deepest-attenuated b=3000 frames), so regressions fail loudly while the
// deterministic value itself stays well clear.
constexpr double kHeldOutMseCeiling = 1.9e-1;

PhantomSpec benchmark_spec(std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  spec.s0 = 1000.0;
  spec.sigma = 0.02;
  spec.seed = seed;

  TensorCompartment fx, fy, fz, ball, iso;
  fx.d = axial_tensor(1.7e-3, 0.3e-3, Eigen::Vector3d::UnitX());
  fy.d = axial_tensor(1.7e-3, 0.3e-3, Eigen::Vector3d::UnitY());
  fz.d = axial_tensor(1.5e-3, 0.25e-3, Eigen::Vector3d(1, 1, 1).normalized());
  ball.d = Eigen::Matrix3d::Identity() * 2.0e-3;
  iso.d = Eigen::Matrix3d::Identity() * 0.8e-3;
  fx.weight = 1.0;
  fy.weight = 0.5;
  fz.weight = 0.7;
  ball.weight = 0.3;
  iso.weight = 1.0;

  TensorCompartment fx_half = fx;
  fx_half.weight = 0.5;
  spec.regions = {
      {"single", {0, 4, 0, 16, 0, 16}, {fx}},
      {"crossing", {4, 8, 0, 16, 0, 16}, {fx_half, fy}},
      {"mixed", {8, 12, 0, 16, 0, 16}, {fz, ball}},
      {"isotropic", {12, 16, 0, 16, 0, 16}, {iso}},
  };
  return spec;
}

Outcome criterion4() {
  const GradientScheme scheme = hcp_like_scheme();
  const CounterRng split_rng(42, "split");
  const CounterRng sub_rng(42, "subsample");
  const int reps = 5;

  int wins = 0, total = 0;
  double worst_poly = 0.0;
  std::string first_loss;

  for (int rep = 0; rep < reps; ++rep) {
    const PhantomResult ph = generate_phantom(benchmark_spec(100 + rep), scheme, 4);
    const NormalizedVolume norm = normalize_b0(ph.raw, scheme, 4);
    if (norm.report.masked_out != 0)
      return {false, "unexpected masked-out voxels in the synthetic volume"};
    const auto n_vox = static_cast<Eigen::Index>(norm.volume.n_voxels());

    const std::vector<double> shells = norm.scheme.shells();
    std::vector<std::vector<std::size_t>> shell_frames(shells.size());
    for (std::size_t i = 0; i < norm.scheme.size(); ++i)
      for (std::size_t s = 0; s < shells.size(); ++s)
        if (norm.scheme.b(i) == shells[s]) shell_frames[s].push_back(i);

    std::vector<std::size_t> test_idx;
    std::vector<std::vector<std::size_t>> pool(shells.size());
    for (std::size_t s = 0; s < shells.size(); ++s) {
      std::vector<std::size_t> order = shell_frames[s];
      split_rng.shuffle(order, (std::uint64_t(rep) << 32) + (std::uint64_t(s) << 20));
      const auto n_test = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(0.25 * double(order.size()))));
      test_idx.insert(test_idx.end(), order.begin(), order.begin() + n_test);
      pool[s].assign(order.begin() + n_test, order.end());
    }
    std::sort(test_idx.begin(), test_idx.end());
    const GradientScheme test_scheme = norm.scheme.subset(test_idx);

    Eigen::MatrixXd obs_log(test_idx.size(), n_vox);
    for (std::size_t i = 0; i < test_idx.size(); ++i)
      obs_log.row(i) =
          norm.volume.data.row(static_cast<Eigen::Index>(test_idx[i])).array().log();

    for (int prot = 1; prot <= 6; ++prot) {
      const std::array<int, 3> counts = table1_counts(prot);
      std::vector<std::size_t> train_idx;
      for (std::size_t s = 0; s < shells.size(); ++s) {
        std::vector<std::size_t> picks = pool[s];
        sub_rng.shuffle(picks, (std::uint64_t(rep) << 40) + (std::uint64_t(prot) << 20) +
                                   (std::uint64_t(s) << 8));
        picks.resize(static_cast<std::size_t>(counts[s]));
        train_idx.insert(train_idx.end(), picks.begin(), picks.end());
      }
      std::sort(train_idx.begin(), train_idx.end());
      const GradientScheme train_scheme = norm.scheme.subset(train_idx);

      BasisConfig cfg = BasisConfig::make_default(10, 4);
      cfg.b_scale = train_scheme.max_b();
      const Projector proj = build_projector(design_matrix(train_scheme, cfg), cfg.ridge_d);
      const DesignMatrix test_design = design_matrix(test_scheme, cfg);

      Eigen::MatrixXd train_log(train_idx.size(), n_vox);
      for (std::size_t i = 0; i < train_idx.size(); ++i)
        train_log.row(i) =
            norm.volume.data.row(static_cast<Eigen::Index>(train_idx[i])).array().log();

      const Eigen::MatrixXd betas = proj.p * train_log;
      const double mse_poly =
          (test_design.x * betas - obs_log).squaredNorm() / double(obs_log.size());

      // The baseline picks its training frame from (b, p) alone, so feeding it
      // frame indices as "signals" recovers the per-frame selection once.
      Eigen::VectorXd frame_ids(train_idx.size());
      for (std::size_t i = 0; i < train_idx.size(); ++i) frame_ids(i) = double(i);
      double base_ss = 0.0;
      for (std::size_t i = 0; i < test_idx.size(); ++i) {
        const auto sel = static_cast<Eigen::Index>(std::llround(baseline_predict(
            train_scheme, frame_ids, test_scheme.b(i), test_scheme.dir(i))));
        base_ss += (train_log.row(sel) - obs_log.row(static_cast<Eigen::Index>(i)))
                       .squaredNorm();
      }
      const double mse_base = base_ss / double(obs_log.size());

      ++total;
      if (mse_poly < mse_base)
        ++wins;
      else if (first_loss.empty())
        first_loss = fmt(" (first loss: protocol %d rep %d, %.4e vs %.4e)", prot, rep,
                         mse_poly, mse_base);
      worst_poly = std::max(worst_poly, mse_poly);
    }
  }
  const bool pass = wins == total && worst_poly <= kHeldOutMseCeiling;
  return {pass, fmt("%d/%d protocol x replication wins over baseline%s; worst held-out "
                    "log-MSE %.4e (ceiling %.2e)",
                    wins, total, first_loss.c_str(), worst_poly, kHeldOutMseCeiling)};
}

// ---------------------------------------------------------------------------
// 5. Cross-validated order selection recovers a planted polynomial order.

Outcome criterion5() {
  std::vector<double> shell_bs;
  std::vector<Eigen::Matrix3d> rotations;
  for (int i = 0; i < 10; ++i) {
    shell_bs.push_back(300.0 + 2700.0 * i / 9.0);
    rotations.push_back(axis_angle(Eigen::Vector3d::UnitZ(), 0.17 * i));
  }
  const GradientScheme scheme = multi_shell_scheme(shell_bs, 20, 0, rotations);
  const auto m = static_cast<Eigen::Index>(scheme.size());
  const int n_vox = 4;

  std::array<int, 2> hits{0, 0};
  for (int kstar = 1; kstar <= 2; ++kstar) {
    BasisConfig cfg = BasisConfig::make_default(10, kstar);
    cfg.b_scale = scheme.max_b();
    const DesignMatrix design = design_matrix(scheme, cfg);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const CounterRng beta_rng(seed, "accept5-beta");
      const CounterRng noise_rng(seed, "accept5-noise");
      Eigen::VectorXd beta(10 * kstar);
      for (int i = 0; i < beta.size(); ++i)
        beta(i) = 0.8 * beta_rng.gaussian(std::uint64_t(kstar) * 100 + i);
      const Eigen::VectorXd clean = design.x * beta;
      Eigen::MatrixXd log_signals(m, n_vox);
      for (int v = 0; v < n_vox; ++v)
        for (Eigen::Index f = 0; f < m; ++f)
          log_signals(f, v) =
              clean(f) + 0.01 * noise_rng.gaussian(std::uint64_t(kstar) << 40 |
                                                   std::uint64_t(v) * m + f);
      const OrderSelection sel = select_order(scheme, log_signals, {1, 2, 3, 4}, 5, seed);
      if (sel.k == kstar) ++hits[kstar - 1];
    }
  }
  return {hits[0] >= 18 && hits[1] >= 18,
          fmt("planted K=1 recovered %d/20, K=2 recovered %d/20 (gate >= 18 each)", hits[0],
              hits[1])};
}

// ---------------------------------------------------------------------------
// 6. Tensor fit is exact on noise-free single-tensor signals; FA fixture.

Outcome criterion6() {
  const Eigen::Matrix3d rot = axis_angle(Eigen::Vector3d(1, 1, 0).normalized(), 0.7);
  const Eigen::Matrix3d d_true =
      rot * Eigen::Vector3d(1.6e-3, 0.5e-3, 0.3e-3).asDiagonal() * rot.transpose();

  const GradientScheme scheme = multi_shell_scheme({700.0, 1400.0}, 32, 2);
  Eigen::VectorXd signal(scheme.size());
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    const Eigen::Vector3d p = scheme.dir(i);
    signal(i) = std::exp(-scheme.b(i) * p.dot(d_true * p));
  }
  const DiffusionTensor t = fit_tensor_wlls(scheme, signal);
  const double d_err = (t.matrix() - d_true).cwiseAbs().maxCoeff();

  DiffusionTensor anis;
  anis.dxx = 2.0e-3;
  anis.dyy = 0.2e-3;
  anis.dzz = 0.2e-3;
  const double fa_err = std::abs(fa(anis) - 0.89113);

  return {d_err <= 1e-8 && fa_err <= 1e-4,
          fmt("max|D_hat - D| = %.3e (tol 1e-8); |FA(2.0,0.2,0.2e-3) - 0.89113| = %.3e "
              "(tol 1e-4)",
              d_err, fa_err)};
}

// ---------------------------------------------------------------------------
// 7. Batch-effect adjustment: planted shift removed, planted scale equalized,
//    single batch untouched.

Outcome criterion7() {
  const CounterRng rng(707, "acceptance-7");
  const int n = 200, g = 8;
  std::vector<std::string> batches(2 * n);
  for (int i = 0; i < 2 * n; ++i) batches[i] = i < n ? "siteA" : "siteB";
  const auto mu = [](int j) { return 0.5 * j; };
  const auto sd = [](int j) { return 1.0 + 0.2 * j; };

  // Additive shift on the second batch.
  Eigen::MatrixXd shifted(2 * n, g);
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < g; ++j)
      shifted(i, j) = mu(j) + sd(j) * rng.gaussian(std::uint64_t(i) * g + j) +
                      (i >= n ? 2.0 + 0.7 * j : 0.0);
  const CombatModel m1 = fit_combat(shifted, batches, nullptr, false);
  const Eigen::MatrixXd adj1 = apply_combat(m1, shifted, batches);
  double worst_mean = 0.0, raw_mean_gap = 1e300;
  for (int j = 0; j < g; ++j) {
    const double ma = adj1.col(j).head(n).mean(), mb = adj1.col(j).tail(n).mean();
    worst_mean = std::max(worst_mean, std::abs(ma - mb));
    raw_mean_gap = std::min(
        raw_mean_gap, std::abs(shifted.col(j).head(n).mean() - shifted.col(j).tail(n).mean()));
  }

  // Doubled noise scale on the second batch. Larger batches here: with EB on,
  // per-feature parity is limited by the sampling noise of the batch
  // variances, ~sqrt(2/ns).
  const int ns = 8000;
  std::vector<std::string> batches_s(2 * ns);
  for (int i = 0; i < 2 * ns; ++i) batches_s[i] = i < ns ? "siteA" : "siteB";
  const auto var_n1 = [](const Eigen::VectorXd& v) {
    return (v.array() - v.mean()).square().sum() / double(v.size() - 1);
  };
  Eigen::MatrixXd scaled(2 * ns, g);
  for (int i = 0; i < 2 * ns; ++i)
    for (int j = 0; j < g; ++j)
      scaled(i, j) = mu(j) + (i >= ns ? 2.0 : 1.0) * sd(j) *
                                 rng.gaussian(std::uint64_t(1) << 32 |
                                              std::uint64_t(i) * g + j);
  double worst_ratio_raw = 0.0, worst_ratio_eb = 0.0, min_inflation = 1e300;
  for (const bool eb : {false, true}) {
    const CombatModel m2 = fit_combat(scaled, batches_s, nullptr, eb);
    const Eigen::MatrixXd adj2 = apply_combat(m2, scaled, batches_s);
    for (int j = 0; j < g; ++j) {
      const double ratio =
          var_n1(adj2.col(j).head(ns)) / var_n1(adj2.col(j).tail(ns));
      (eb ? worst_ratio_eb : worst_ratio_raw) =
          std::max(eb ? worst_ratio_eb : worst_ratio_raw, std::abs(ratio - 1.0));
    }
  }
  for (int j = 0; j < g; ++j)
    min_inflation = std::min(min_inflation, var_n1(scaled.col(j).tail(ns)) /
                                                var_n1(scaled.col(j).head(ns)));

  // Single batch: identity transform plus a warning.
  const std::vector<std::string> one_batch(2 * n, "siteA");
  const CombatModel m3 = fit_combat(shifted, one_batch, nullptr, true);
  const double noop_err = (apply_combat(m3, shifted, one_batch) - shifted)
                              .cwiseAbs()
                              .maxCoeff();

  const bool pass = worst_mean <= 1e-8 && raw_mean_gap > 1.0 && worst_ratio_raw <= 0.05 &&
                    worst_ratio_eb <= 0.05 && min_inflation > 2.5 && noop_err <= 1e-10 &&
                    m3.single_batch && !m3.warning.empty();
  return {pass, fmt("post-adjustment batch-mean gap %.2e (tol 1e-8, raw >= %.2f); variance "
                    "ratio off by %.3f raw / %.3f EB (tol 0.05, raw inflation >= %.1fx); "
                    "single-batch no-op err %.2e",
                    worst_mean, raw_mean_gap, worst_ratio_raw, worst_ratio_eb, min_inflation,
                    noop_err)};
}

// ---------------------------------------------------------------------------
// 8. Harmonization reduces protocol-driven false positives and improves
//    scan-rescan ICC on a crossing-fiber population.

struct ScanPipeline {
  GradientScheme sub;   // acquisition subset, b0 frames included
  GradientScheme dwi;   // b > 0 part, matches the normalized volume
  BasisConfig cfg;
  Projector proj;

  explicit ScanPipeline(const std::vector<std::size_t>& idx) {
    sub = hcp_like_scheme().subset(idx);
    dwi = sub.subset(sub.dwi_indices());
    cfg = BasisConfig::make_default(10, 4);
    cfg.b_scale = dwi.max_b();
    proj = build_projector(design_matrix(dwi, cfg), cfg.ridge_d);
  }
};

struct ScanFeatures {
  Eigen::VectorXd fa_orig, md_orig, fa_harm, md_harm;
};

ScanFeatures process_scan(const SignalVolume& vol, const ScanPipeline& pipe,
                          const GradientScheme& target) {
  const NormalizedVolume norm = normalize_b0(vol, pipe.sub, 4);
  const FeatureVolumes orig = extract_features(norm.volume, norm.scheme, 4);
  const FitVolume fit = fit_volume(pipe.proj, norm.volume, pipe.cfg, pipe.dwi.max_b(), 4);
  const ResampleResult res = resample_volume(fit, target, false, 4);
  const FeatureVolumes harm = extract_features(res.volume, target, 4);
  return {orig.fa, orig.md, harm.fa, harm.md};
}

SignalVolume synthesize_scan(const std::vector<VoxelModel>& models,
                             const GradientScheme& sub, double s0, double sigma_abs,
                             const CounterRng& rng, std::uint64_t base) {
  const int nv = static_cast<int>(models.size());
  SignalVolume vol = make_volume({nv, 1, 1}, static_cast<int>(sub.size()));
  for (int v = 0; v < nv; ++v)
    for (std::size_t f = 0; f < sub.size(); ++f) {
      const double s = s0 * multi_tensor_signal(models[v], sub.b(f), sub.dir(f));
      vol.data(static_cast<Eigen::Index>(f), v) =
          add_rician_noise(s, sigma_abs, rng, base + std::uint64_t(v) * 276 + f);
    }
  return vol;
}

Outcome criterion8() {
  const GradientScheme target = hcp_like_scheme();
  const double pi = std::numbers::pi;
  const Eigen::Matrix3d bend_a = axis_angle(Eigen::Vector3d::UnitY(), 1.2);
  const Eigen::Matrix3d bend_b = axis_angle(Eigen::Vector3d::UnitY(), 1.3);

  // Part 1: paired t-tests between two protocols of the same anatomy. With 10
  // noise replications per protocol, protocol-driven FA bias shows up as
  // spurious "effects"; harmonizing both to the full scheme must not create
  // survivors anywhere the originals had none.
  const int nv_t = 256, reps = 10;
  std::vector<VoxelModel> models_t(nv_t);
  for (int v = 0; v < nv_t; ++v) {
    const double ang = 2.0 * pi * v / nv_t;
    const Eigen::Vector3d e1(std::cos(ang), std::sin(ang), 0.0);
    const double w = 0.4 + 0.4 * (v % 7) / 6.0;
    TensorCompartment c1, c2;
    c1.weight = w;
    c1.d = axial_tensor(1.7e-3, 0.3e-3, e1);
    c2.weight = 1.0 - w;
    c2.d = axial_tensor(1.4e-3, 0.4e-3, (bend_a * e1).normalized());
    models_t[v] = {c1, c2};
  }

  const ScanPipeline pipe_p1(protocol_subset(6, 90, {60, 30, 15}));
  const ScanPipeline pipe_p3(protocol_subset(6, 90, {30, 60, 15}));
  const CounterRng noise_t(2026, "rician");

  std::array<std::vector<Eigen::VectorXd>, 2> fa_orig, fa_harm;  // [protocol][rep]
  for (int rep = 0; rep < reps; ++rep)
    for (int prot = 0; prot < 2; ++prot) {
      const ScanPipeline& pipe = prot ? pipe_p3 : pipe_p1;
      const std::uint64_t base = std::uint64_t(rep * 2 + prot) * nv_t * 276;
      const SignalVolume vol =
          synthesize_scan(models_t, pipe.sub, 1000.0, 20.0, noise_t, base);
      const ScanFeatures f = process_scan(vol, pipe, target);
      fa_orig[prot].push_back(f.fa_orig);
      fa_harm[prot].push_back(f.fa_harm);
    }

  std::vector<double> p_orig(nv_t), p_harm(nv_t);
  for (int v = 0; v < nv_t; ++v) {
    Eigen::VectorXd a(reps), b(reps), ah(reps), bh(reps);
    for (int r = 0; r < reps; ++r) {
      a(r) = fa_orig[0][r](v);
      b(r) = fa_orig[1][r](v);
      ah(r) = fa_harm[0][r](v);
      bh(r) = fa_harm[1][r](v);
    }
    p_orig[v] = paired_t_test(a, b).p;
    p_harm[v] = paired_t_test(ah, bh).p;
  }
  const std::vector<double> taus{3, 5, 10, 15};
  const auto surv_orig = neglogp_threshold_counts(p_orig, taus);
  const auto surv_harm = neglogp_threshold_counts(p_harm, taus);
  bool t_ok = true;
  for (std::size_t i = 0; i < taus.size(); ++i)
    if (surv_harm[i] > surv_orig[i]) t_ok = false;

  // Part 2: scan-rescan ICC across 10 subjects, 2 sites x 2 scans each, with
  // subject-specific anatomy and site-specific protocols and noise floors.
  const int nv_i = 192, n_subj = 10;
  const ScanPipeline pipe_s1(protocol_subset(6, 90, {90, 60, 30}));
  const ScanPipeline pipe_s2(protocol_subset(6, 90, {30, 60, 90}));
  const CounterRng noise_i(2027, "rician");

  std::vector<Eigen::VectorXd> c_fa_orig, c_fa_harm, c_md_orig, c_md_harm;
  std::vector<std::string> batches;
  std::vector<int> subject_of;
  for (int s = 0; s < n_subj; ++s) {
    const double lam_scale = 1.0 + 0.03 * (s - 4.5) / 4.5;
    const double w_shift = 0.01 * (s - 4.5);
    const double wiso = 0.10 + 0.04 * s;
    std::vector<VoxelModel> models(nv_i);
    for (int v = 0; v < nv_i; ++v) {
      const double ang = 2.0 * pi * v / nv_i;
      const double r = std::sqrt(1.0 - 0.3 * 0.3);
      const Eigen::Vector3d e1(r * std::cos(ang), r * std::sin(ang), 0.3);
      const double wf = std::clamp(0.5 + 0.3 * (v % 7) / 6.0 + w_shift, 0.05, 0.95);
      TensorCompartment c1, c2, ci;
      c1.weight = wf * (1.0 - wiso);
      c1.d = axial_tensor(1.1e-3 * lam_scale, 0.15e-3, e1);
      c2.weight = (1.0 - wf) * (1.0 - wiso);
      c2.d = axial_tensor(0.9e-3, 0.2e-3, (bend_b * e1).normalized());
      ci.weight = wiso;
      ci.d = Eigen::Matrix3d::Identity() * 3.0e-3;
      models[v] = {c1, c2, ci};
    }
    for (int t = 0; t < 4; ++t) {
      const int site = t / 2;
      const ScanPipeline& pipe = site ? pipe_s2 : pipe_s1;
      const double sigma_abs = site ? 1.2 : 0.8;
      const std::uint64_t base = std::uint64_t(s * 4 + t) * nv_i * 276;
      const SignalVolume vol =
          synthesize_scan(models, pipe.sub, 1000.0, sigma_abs, noise_i, base);
      const ScanFeatures f = process_scan(vol, pipe, target);
      c_fa_orig.push_back(f.fa_orig);
      c_fa_harm.push_back(f.fa_harm);
      c_md_orig.push_back(f.md_orig);
      c_md_harm.push_back(f.md_harm);
      batches.push_back(fmt("site%d_scan%d", site + 1, t % 2 + 1));
      subject_of.push_back(s);
    }
  }

  const auto combat_maps = [&](const std::vector<Eigen::VectorXd>& maps) {
    Eigen::MatrixXd feat(maps.size(), nv_i);
    for (std::size_t i = 0; i < maps.size(); ++i) feat.row(i) = maps[i].transpose();
    const CombatModel model = fit_combat(feat, batches, nullptr, true);
    const Eigen::MatrixXd adj = apply_combat(model, feat, batches);
    std::vector<Eigen::VectorXd> out(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) out[i] = adj.row(i).transpose();
    return out;
  };
  const auto fa_orig_cb = combat_maps(c_fa_orig);
  const auto fa_harm_cb = combat_maps(c_fa_harm);
  const auto md_orig_cb = combat_maps(c_md_orig);
  const auto md_harm_cb = combat_maps(c_md_harm);

  const std::vector<std::uint8_t> all_mask(nv_i, 1);
  const double f_fa_13 =
      icc_difference_map(c_fa_orig, c_fa_harm, subject_of, all_mask).improved_fraction;
  const double f_fa_24 =
      icc_difference_map(fa_orig_cb, fa_harm_cb, subject_of, all_mask).improved_fraction;
  const double f_md_13 =
      icc_difference_map(c_md_orig, c_md_harm, subject_of, all_mask).improved_fraction;
  const double f_md_24 =
      icc_difference_map(md_orig_cb, md_harm_cb, subject_of, all_mask).improved_fraction;

  const bool icc_ok =
      f_fa_13 >= 0.60 && f_fa_24 >= 0.60 && f_md_13 >= 0.60 && f_md_24 >= 0.60;
  return {t_ok && icc_ok,
          fmt("t-test survivors harmonized/original %lld/%lld %lld/%lld %lld/%lld %lld/%lld "
              "at tau=3/5/10/15 (harmonized must not exceed); ICC improved fractions FA "
              "%.3f (raw) %.3f (ComBat), MD %.3f (raw) %.3f (ComBat), gate 0.60",
              static_cast<long long>(surv_harm[0]), static_cast<long long>(surv_orig[0]),
              static_cast<long long>(surv_harm[1]), static_cast<long long>(surv_orig[1]),
              static_cast<long long>(surv_harm[2]), static_cast<long long>(surv_orig[2]),
              static_cast<long long>(surv_harm[3]), static_cast<long long>(surv_orig[3]),
              f_fa_13, f_fa_24, f_md_13, f_md_24)};
}

// ---------------------------------------------------------------------------
// 9. Student-t tail probabilities against direct numerical integration; ICC
//    on the tiny two-subject fixture.

double t_pdf(double x, double df) {
  const double c = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                   0.5 * std::log(df * std::numbers::pi);
  return std::exp(c - 0.5 * (df + 1.0) * std::log1p(x * x / df));
}

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double fa_, double fm, double fb,
                        double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa_ + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa_, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

// P(T > t) for t >= 0 via x = t + tan(u) on u in [0, pi/2].
double t_tail_oracle(double t, double df) {
  const double half_pi = 0.5 * std::numbers::pi;
  const auto g = [&](double u) {
    if (u >= half_pi) return df == 1.0 ? 1.0 / std::numbers::pi : 0.0;
    const double tn = std::tan(u);
    return t_pdf(t + tn, df) * (1.0 + tn * tn);
  };
  const double fa_ = g(0.0), fb = g(half_pi), fm = g(0.5 * half_pi);
  const double whole = half_pi / 6.0 * (fa_ + 4.0 * fm + fb);
  return adaptive_simpson(g, 0.0, half_pi, fa_, fm, fb, whole, 1e-13, 45);
}

Outcome criterion9() {
  double worst = 0.0;
  int worst_df = 0;
  for (int df = 1; df <= 100; ++df)
    for (const double t : {0.3, 1.2, 2.4, 4.8}) {
      const double p_lib = 2.0 * (1.0 - student_t_cdf(t, df));
      const double p_orc = 2.0 * t_tail_oracle(t, df);
      if (std::abs(p_lib - p_orc) > worst) {
        worst = std::abs(p_lib - p_orc);
        worst_df = df;
      }
    }

  const IccResult r = icc({{0.0, 2.0}, {10.0, 12.0}});
  const double icc_err = std::abs(r.value - 0.9423);

  return {worst <= 1e-10 && icc_err <= 1e-4,
          fmt("max |p - oracle| = %.3e at df=%d over df 1..100 x 4 t-values (tol 1e-10); "
              "|ICC - 0.9423| = %.3e (tol 1e-4)",
              worst, worst_df, icc_err)};
}

// ---------------------------------------------------------------------------
// 10. Bit-exact storage and byte-identical CLI reruns.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_json_modulo_timing(const fs::path& a, const fs::path& b) {
  json ja = json::parse(slurp(a));
  json jb = json::parse(slurp(b));
  ja.erase("timing");
  jb.erase("timing");
  return ja == jb;
}

Outcome criterion10(const std::string& cli) {
  if (cli.empty()) return {false, "missing CLI path argument"};

  // Float32 volume storage is bit-exact, including signed zero and denormals.
  {
    const CounterRng rng(1010, "acceptance-10");
    SignalVolume vol = make_volume({5, 4, 3}, 2);
    for (Eigen::Index i = 0; i < vol.data.size(); ++i)
      vol.data(i) = double(float(20.0 * rng.uniform(i) - 10.0));
    vol.data(0) = -0.0;
    vol.data(1) = double(1e-40f);
    vol.data(2) = double(3.25e38f);
    const fs::path tmp = fs::temp_directory_path() /
                         fmt("polyrbf_accept10_rt_%d.nii", int(::getpid()));
    write_nifti(vol, tmp.string(), NiftiDtype::f32);
    const SignalVolume back = read_nifti(tmp.string());
    fs::remove(tmp);
    for (Eigen::Index i = 0; i < vol.data.size(); ++i) {
      const float w = float(vol.data(i)), r = float(back.data(i));
      if (std::memcmp(&w, &r, sizeof w) != 0)
        return {false, fmt("float32 round trip altered value at flat index %ld", long(i))};
    }
  }

  // Gradient text round trip preserves every byte of every double.
  {
    const CounterRng rng(1011, "acceptance-10");
    std::uint64_t c = 0;
    std::vector<double> bvals{0.0, 0.0};
    Eigen::Matrix3Xd bvecs(3, 14);
    bvecs.col(0).setZero();
    bvecs.col(1).setZero();
    for (int i = 2; i < 14; ++i) {
      bvals.push_back(i < 8 ? 1000.37 : 2715.9);
      bvecs.col(i) = random_unit(rng, c);
    }
    const GradientScheme scheme(bvals, bvecs);
    const fs::path dir = fs::temp_directory_path() /
                         fmt("polyrbf_accept10_sch_%d", int(::getpid()));
    fs::create_directories(dir);
    scheme.save((dir / "bvals").string(), (dir / "bvecs").string());
    const GradientScheme back =
        GradientScheme::load((dir / "bvals").string(), (dir / "bvecs").string());
    fs::remove_all(dir);
    if (back.fingerprint() != scheme.fingerprint())
      return {false, "gradient scheme fingerprint changed across save/load"};
    for (std::size_t i = 0; i < scheme.size(); ++i)
      if (back.b(i) != scheme.b(i) || back.dir(i) != scheme.dir(i))
        return {false, fmt("gradient frame %zu changed across save/load", i)};
  }

  // CLI reruns (same seed, any --threads) are byte-identical, with JSON
  // reports compared after dropping the wall-clock timing entry.
  const fs::path root =
      fs::temp_directory_path() / fmt("polyrbf_accept10_%d", int(::getpid()));
  fs::create_directories(root);
  const auto run = [&](const std::string& args) {
    const std::string cmd =
        cli + " " + args + " >> " + (root / "log.txt").string() + " 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const auto at = [&](const char* rel) { return (root / rel).string(); };
  std::string failure;
  const auto expect_same = [&](const char* a, const char* b) {
    if (failure.empty() && slurp(root / a) != slurp(root / b))
      failure = fmt("%s differs from %s", a, b);
  };

  try {
    PhantomSpec spec;
    spec.dims = {6, 6, 4};
    spec.sigma = 0.02;
    spec.seed = 5;
    TensorCompartment fiber, ball;
    fiber.d = axial_tensor(1.7e-3, 0.3e-3, Eigen::Vector3d::UnitX());
    ball.d = Eigen::Matrix3d::Identity() * 1.2e-3;
    spec.regions = {{"fiber", {0, 6, 0, 6, 0, 2}, {fiber}},
                    {"ball", {0, 6, 0, 6, 2, 4}, {ball}}};
    std::ofstream(root / "spec.json") << spec.to_json().dump(2) << "\n";
    std::ofstream(root / "cfg.json") << R"({"n": 8, "k": 2})" << "\n";

    json manifest;
    manifest["datasets"] = json::array();
    manifest["datasets"].push_back({{"name", "a"},
                                    {"batch", "x"},
                                    {"volume", at("simA/dwi.nii")},
                                    {"bvals", at("simA/bvals")},
                                    {"bvecs", at("simA/bvecs")}});
    manifest["datasets"].push_back({{"name", "b"},
                                    {"batch", "x"},
                                    {"volume", at("simB/dwi.nii")},
                                    {"bvals", at("simB/bvals")},
                                    {"bvecs", at("simB/bvecs")}});
    std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";

    const bool ran =
        run("simulate --spec " + at("spec.json") + " --out-dir " + at("simA")) &&
        run("--threads 4 simulate --spec " + at("spec.json") + " --out-dir " + at("simA2")) &&
        run("--seed 6 simulate --spec " + at("spec.json") + " --out-dir " + at("simB")) &&
        run("fit --dwi " + at("simA/dwi.nii") + " --bvals " + at("simA/bvals") +
            " --bvecs " + at("simA/bvecs") + " --config " + at("cfg.json") + " --out " +
            at("fit1.prb") + " --report " + at("fitrep1.json")) &&
        run("--threads 4 fit --dwi " + at("simA/dwi.nii") + " --bvals " + at("simA/bvals") +
            " --bvecs " + at("simA/bvecs") + " --config " + at("cfg.json") + " --out " +
            at("fit2.prb") + " --report " + at("fitrep2.json")) &&
        run("predict --fit " + at("fit1.prb") + " --bvals " + at("simA/bvals") +
            " --bvecs " + at("simA/bvecs") + " --out " + at("pred1.nii")) &&
        run("--threads 4 predict --fit " + at("fit1.prb") + " --bvals " + at("simA/bvals") +
            " --bvecs " + at("simA/bvecs") + " --out " + at("pred2.nii")) &&
        run("--seed 9 benchmark --dwi " + at("simA/dwi.nii") + " --bvals " +
            at("simA/bvals") + " --bvecs " + at("simA/bvecs") + " --config " +
            at("cfg.json") + " --replications 2 --out " + at("bench1.csv")) &&
        run("--seed 9 --threads 4 benchmark --dwi " + at("simA/dwi.nii") + " --bvals " +
            at("simA/bvals") + " --bvecs " + at("simA/bvecs") + " --config " +
            at("cfg.json") + " --replications 2 --out " + at("bench2.csv")) &&
        run("harmonize --manifest " + at("manifest.json") + " --config " + at("cfg.json") +
            " --out-dir " + at("harm1")) &&
        run("--threads 4 harmonize --manifest " + at("manifest.json") + " --config " +
            at("cfg.json") + " --out-dir " + at("harm2"));
    if (!ran) failure = "a CLI invocation exited nonzero (see log.txt)";

    if (failure.empty()) {
      expect_same("simA/dwi.nii", "simA2/dwi.nii");
      expect_same("simA/truth_dwi.nii", "simA2/truth_dwi.nii");
      expect_same("simA/truth_fa.nii", "simA2/truth_fa.nii");
      expect_same("simA/bvals", "simA2/bvals");
      expect_same("simA/bvecs", "simA2/bvecs");
      expect_same("fit1.prb", "fit2.prb");
      expect_same("pred1.nii", "pred2.nii");
      expect_same("bench1.csv", "bench2.csv");
      expect_same("harm1/a/original_fa.nii", "harm2/a/original_fa.nii");
      expect_same("harm1/a/harmonized_fa.nii", "harm2/a/harmonized_fa.nii");
      expect_same("harm1/b/harmonized_md.nii", "harm2/b/harmonized_md.nii");
      expect_same("harm1/a/harmonized_fa_combat.nii", "harm2/a/harmonized_fa_combat.nii");
      if (failure.empty() && slurp(root / "simA/dwi.nii") == slurp(root / "simB/dwi.nii"))
        failure = "different seeds produced identical volumes";
      if (failure.empty() &&
          !same_json_modulo_timing(root / "simA/provenance.json",
                                   root / "simA2/provenance.json"))
        failure = "simulate provenance differs beyond timing";
      if (failure.empty() &&
          !same_json_modulo_timing(root / "fitrep1.json", root / "fitrep2.json"))
        failure = "fit report differs beyond timing";
      if (failure.empty() &&
          !same_json_modulo_timing(root / "harm1/provenance.json",
                                   root / "harm2/provenance.json"))
        failure = "harmonize provenance differs beyond timing";
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }
  fs::remove_all(root);

  if (!failure.empty()) return {false, failure};
  return {true, "float32 and gradient round trips bit-exact; simulate/fit/predict/"
                "benchmark/harmonize reruns byte-identical across --threads 1 and 4"};
}

} // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <criterion 1-10> [cli-path]\n");
    return 2;
  }
  const int which = std::atoi(argv[1]);
  const std::string cli = argc > 2 ? argv[2] : "";

  Outcome o;
  try {
    switch (which) {
      case 1: o = criterion1(); break;
      case 2: o = criterion2(); break;
      case 3: o = criterion3(); break;
      case 4: o = criterion4(); break;
      case 5: o = criterion5(); break;
      case 6: o = criterion6(); break;
      case 7: o = criterion7(); break;
      case 8: o = criterion8(); break;
      case 9: o = criterion9(); break;
      case 10: o = criterion10(cli); break;
      default:
        std::fprintf(stderr, "unknown criterion %d\n", which);
        return 2;
    }
  } catch (const std::exception& e) {
    o = {false, std::string("unexpected exception: ") + e.what()};
  }
  std::printf("criterion %d: %s - %s\n", which, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  return o.pass ? 0 : 1;
}
