#include "polyrbf/pipeline.hpp"

#include <utility>

#include "polyrbf/errors.hpp"
#include "polyrbf/stats.hpp"

namespace polyrbf {

namespace {

template <typename Fn>
auto run_stage(const std::string& stage, const std::string& dataset, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error("[stage " + stage + "] dataset '" + dataset + "': " + e.what(),
                e.exit_code());
  }
}

double in_sample_mse(const Projector& projector, const SignalVolume& normalized,
                     const FitVolume& fit) {
  double ss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < fit.voxels.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(fit.voxels[i]);
    const Eigen::VectorXd y = normalized.data.col(col).array().log().matrix();
    const Eigen::VectorXd r = y - projector.x * fit.betas.col(static_cast<Eigen::Index>(i));
    ss += r.squaredNorm();
    count += static_cast<std::size_t>(r.size());
  }
  return count ? ss / static_cast<double>(count) : 0.0;
}

} // namespace

PipelineResult harmonize_pipeline(const std::vector<DatasetSpec>& datasets,
                                  const GradientScheme& target, const PipelineOptions& opt) {
  if (datasets.empty()) throw ValidationError("harmonize_pipeline needs at least one dataset");
  if (target.size() == 0) throw ValidationError("empty target scheme");

  PipelineResult out;
  out.combat = opt.combat;

  // Shared projector per distinct (scheme, config) pair.
  std::map<std::pair<std::uint64_t, std::uint64_t>, Projector> projector_cache;

  for (const auto& ds : datasets) {
    DatasetResult r;
    r.name = ds.name;
    r.batch = ds.batch;

    NormalizedVolume norm = run_stage("normalize", ds.name, [&] {
      return normalize_b0(ds.volume, ds.scheme, opt.threads);
    });
    r.normalize_report = norm.report;

    BasisConfig cfg = opt.config;
    if (cfg.b_scale <= 0.0) cfg.b_scale = norm.scheme.max_b();

    const FitVolume fit = run_stage("fit", ds.name, [&]() -> FitVolume {
      const auto key = std::make_pair(norm.volume.scheme_fingerprint, cfg.fingerprint());
      auto it = projector_cache.find(key);
      if (it == projector_cache.end()) {
        const DesignMatrix design = design_matrix(norm.scheme, cfg);
        it = projector_cache.emplace(key, build_projector(design, cfg.ridge_d)).first;
      }
      FitVolume fv = fit_volume(it->second, norm.volume, cfg, norm.scheme.max_b(), opt.threads);
      r.in_sample_mse = in_sample_mse(it->second, norm.volume, fv);
      return fv;
    });
    r.scheme_fingerprint = fit.scheme_fingerprint;
    r.config_fingerprint = cfg.fingerprint();

    ResampleResult resampled = run_stage("predict", ds.name, [&] {
      return resample_volume(fit, target, opt.allow_extrapolation, opt.threads);
    });
    r.extrapolation = resampled.report;
    if (!resampled.report.warning.empty())
      out.warnings.push_back("dataset '" + ds.name + "': " + resampled.report.warning);

    r.original = run_stage("features", ds.name, [&] {
      return extract_features(norm.volume, norm.scheme, opt.threads);
    });
    r.harmonized = run_stage("features", ds.name, [&] {
      return extract_features(resampled.volume, target, opt.threads);
    });
    out.datasets.push_back(std::move(r));
  }

  // Common mask across datasets (dims must agree).
  const auto& dims0 = out.datasets.front().original.dims;
  for (const auto& d : out.datasets)
    if (d.original.dims != dims0)
      throw ValidationError("datasets have mismatched grid dimensions");
  out.common_mask = out.datasets.front().original.mask;
  for (const auto& d : out.datasets)
    for (std::size_t v = 0; v < out.common_mask.size(); ++v)
      out.common_mask[v] = out.common_mask[v] && d.original.mask[v] && d.harmonized.mask[v];

  if (!opt.combat) return out;

  std::vector<std::size_t> common;
  for (std::size_t v = 0; v < out.common_mask.size(); ++v)
    if (out.common_mask[v]) common.push_back(v);
  if (common.empty()) {
    out.warnings.push_back("ComBat skipped: empty common mask");
    return out;
  }

  const auto n = static_cast<Eigen::Index>(out.datasets.size());
  const auto g = static_cast<Eigen::Index>(common.size());
  std::vector<std::string> batches;
  for (const auto& d : out.datasets) batches.push_back(d.batch);

  auto adjust = [&](auto getter) {
    Eigen::MatrixXd feat(n, g);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < g; ++j)
        feat(i, j) = getter(out.datasets[i])(static_cast<Eigen::Index>(common[j]));
    const CombatModel model = run_stage("combat", "<pooled>", [&] {
      return fit_combat(feat, batches, nullptr, opt.combat_eb);
    });
    if (!model.warning.empty()) out.warnings.push_back("ComBat: " + model.warning);
    const Eigen::MatrixXd adjusted = apply_combat(model, feat, batches);
    std::vector<Eigen::VectorXd> maps;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd full = getter(out.datasets[i]);
      for (Eigen::Index j = 0; j < g; ++j)
        full(static_cast<Eigen::Index>(common[j])) = adjusted(i, j);
      maps.push_back(std::move(full));
    }
    return maps;
  };

  out.original_fa_combat = adjust([](const DatasetResult& d) { return d.original.fa; });
  out.harmonized_fa_combat = adjust([](const DatasetResult& d) { return d.harmonized.fa; });
  out.original_md_combat = adjust([](const DatasetResult& d) { return d.original.md; });
  out.harmonized_md_combat = adjust([](const DatasetResult& d) { return d.harmonized.md; });
  return out;
}

} // namespace polyrbf
