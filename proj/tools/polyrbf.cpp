#include <CLI11.hpp>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "polyrbf/artifact.hpp"
#include "polyrbf/basis.hpp"
#include "polyrbf/errors.hpp"
#include "polyrbf/estimator.hpp"
#include "polyrbf/nifti.hpp"
#include "polyrbf/phantom.hpp"
#include "polyrbf/pipeline.hpp"
#include "polyrbf/predictor.hpp"
#include "polyrbf/rng.hpp"
#include "polyrbf/stats.hpp"
#include "polyrbf/volume.hpp"

namespace {

using nlohmann::json;
using namespace polyrbf;

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 1;
  bool verbose = false;
};

std::chrono::steady_clock::time_point t_start;

void note(const GlobalOpts& g, const std::string& msg) {
  if (g.verbose) std::cerr << "polyrbf: " << msg << "\n";
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open JSON file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("invalid JSON in " + path + ": " + e.what());
  }
}

// Reports carry a "timing" key that reruns are allowed to differ in; all
// other content is deterministic.
void write_report(json report, const std::string& path) {
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  report["timing"] = {{"seconds", secs}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path);
  out << report.dump(2) << "\n";
  if (!out) throw IOError("write failed: " + path);
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IOError("write failed: " + path);
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

SignalVolume load_volume(const std::string& dwi, const std::string& mask_path) {
  SignalVolume vol = read_nifti(dwi);
  if (!mask_path.empty()) vol.mask = read_mask(mask_path, vol.dims);
  return vol;
}

SignalVolume scalar_volume(const std::array<int, 3>& dims, const Eigen::VectorXd& values,
                           const std::vector<std::uint8_t>& mask) {
  SignalVolume vol = make_volume(dims, 1);
  vol.mask = mask;
  vol.data.row(0) = values.transpose();
  return vol;
}

struct FitSettings {
  int n = 10;
  int k = 4;
  bool auto_k = false;
  std::vector<int> k_candidates{1, 2, 3, 4};
  int folds = 5;
  double ridge_d = -1.0;
  double taper_mult = 3.0;
  double b_scale = -1.0;  // <= 0: max training b
};

FitSettings parse_fit_config(const std::string& path) {
  FitSettings s;
  if (path.empty()) return s;
  const json j = load_json_file(path);
  s.n = j.value("n", s.n);
  if (j.contains("k")) {
    if (j.at("k").is_string()) {
      if (j.at("k").get<std::string>() != "auto")
        throw ValidationError("config \"k\" must be an integer or \"auto\"");
      s.auto_k = true;
    } else {
      s.k = j.at("k").get<int>();
    }
  }
  if (j.contains("k_candidates")) s.k_candidates = j.at("k_candidates").get<std::vector<int>>();
  s.folds = j.value("folds", s.folds);
  s.ridge_d = j.value("ridge_d", s.ridge_d);
  s.taper_mult = j.value("taper_mult", s.taper_mult);
  s.b_scale = j.value("b_scale", s.b_scale);
  return s;
}

BasisConfig make_config(const FitSettings& s, double max_b) {
  BasisConfig cfg = BasisConfig::make_default(s.n, s.k);
  cfg.ridge_d = s.ridge_d;
  cfg.taper_mult = s.taper_mult;
  cfg.b_scale = s.b_scale > 0.0 ? s.b_scale : max_b;
  return cfg;
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string dwi, bvals, bvecs, mask, config, out, report;
};

void cmd_fit(const FitArgs& a, const GlobalOpts& g) {
  const GradientScheme scheme = GradientScheme::load(a.bvals, a.bvecs);
  SignalVolume raw = load_volume(a.dwi, a.mask);
  FitSettings settings = parse_fit_config(a.config);

  note(g, "normalizing " + std::to_string(raw.n_voxels()) + " voxels");
  const NormalizedVolume norm = normalize_b0(raw, scheme, g.threads);

  json report;
  int k_used = settings.k;
  if (settings.auto_k) {
    // Pool up to 512 masked voxels (linear order) for cross-validation.
    std::vector<Eigen::Index> cols;
    for (std::size_t v = 0; v < norm.volume.n_voxels() && cols.size() < 512; ++v)
      if (norm.volume.mask[v]) cols.push_back(static_cast<Eigen::Index>(v));
    if (cols.empty()) throw ValidationError("no masked voxels available for order selection");
    Eigen::MatrixXd logs(norm.volume.m, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
      logs.col(static_cast<Eigen::Index>(i)) =
          norm.volume.data.col(cols[i]).array().log().matrix();
    const OrderSelection sel =
        select_order(norm.scheme, logs, settings.k_candidates, settings.folds, g.seed);
    k_used = sel.k;
    json cv;
    for (const auto& [k, loss] : sel.cv_loss) cv[std::to_string(k)] = loss;
    report["order_selection"] = {{"selected_k", sel.k}, {"cv_loss", cv}};
    if (!sel.warning.empty()) {
      report["order_selection"]["warning"] = sel.warning;
      std::cerr << "warning: " << sel.warning << "\n";
    }
  }

  FitSettings used = settings;
  used.k = k_used;
  const BasisConfig cfg = make_config(used, norm.scheme.max_b());
  const DesignMatrix design = design_matrix(norm.scheme, cfg);
  const Projector projector = build_projector(design, cfg.ridge_d);
  note(g, "fitting " + std::to_string(norm.volume.n_voxels()) + " voxels");
  const FitVolume fit =
      fit_volume(projector, norm.volume, cfg, norm.scheme.max_b(), g.threads);
  save_fit(fit, a.out);

  if (!a.report.empty()) {
    double mse = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < fit.voxels.size(); ++i) {
      const Eigen::VectorXd y =
          norm.volume.data.col(static_cast<Eigen::Index>(fit.voxels[i])).array().log().matrix();
      mse += (y - projector.x * fit.betas.col(static_cast<Eigen::Index>(i))).squaredNorm();
      cnt += static_cast<std::size_t>(y.size());
    }
    report["in_sample_mse_log"] = cnt ? mse / static_cast<double>(cnt) : 0.0;
    report["n_masked_voxels"] = fit.voxels.size();
    report["clamped_values"] = norm.report.clamped;
    report["masked_out_voxels"] = norm.report.masked_out;
    report["scheme_fingerprint"] = fingerprint_hex(fit.scheme_fingerprint);
    report["config_fingerprint"] = fingerprint_hex(cfg.fingerprint());
    report["k"] = k_used;
    report["n"] = cfg.n;
    write_report(report, a.report);
  }
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string fit, bvals, bvecs, out, report, dtype = "float64";
  bool allow_extrapolation = false;
};

void cmd_predict(const PredictArgs& a, const GlobalOpts& g) {
  const FitVolume fit = load_fit(a.fit);
  const GradientScheme target = GradientScheme::load(a.bvals, a.bvecs);
  note(g, "predicting " + std::to_string(target.size()) + " frames");
  const ResampleResult res = resample_volume(fit, target, a.allow_extrapolation, g.threads);
  if (!res.report.warning.empty()) std::cerr << "warning: " << res.report.warning << "\n";
  if (a.dtype != "float32" && a.dtype != "float64")
    throw ValidationError("--dtype must be float32 or float64");
  write_nifti(res.volume, a.out,
              a.dtype == "float32" ? NiftiDtype::f32 : NiftiDtype::f64);
  if (!a.report.empty()) {
    json report;
    report["frames"] = target.size();
    report["train_max_b"] = res.report.train_max_b;
    report["extrapolated_frames"] = res.report.flagged_frames;
    report["scheme_fingerprint"] = fingerprint_hex(target.fingerprint());
    write_report(report, a.report);
  }
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string spec, bvals, bvecs, out_dir;
};

void cmd_simulate(const SimulateArgs& a, const GlobalOpts& g, bool seed_given) {
  PhantomSpec spec = PhantomSpec::from_json(load_json_file(a.spec));
  if (seed_given) spec.seed = g.seed;
  GradientScheme scheme;
  if (!a.bvals.empty() || !a.bvecs.empty()) {
    if (a.bvals.empty() || a.bvecs.empty())
      throw ValidationError("--bvals and --bvecs must be given together");
    scheme = GradientScheme::load(a.bvals, a.bvecs);
  } else {
    scheme = hcp_like_scheme();
  }

  note(g, "simulating " + std::to_string(spec.dims[0] * spec.dims[1] * spec.dims[2]) +
              " voxels x " + std::to_string(scheme.size()) + " frames");
  const PhantomResult res = generate_phantom(spec, scheme, g.threads);

  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  write_nifti(res.raw, (dir / "dwi.nii").string(), NiftiDtype::f64);
  write_nifti(res.truth.noise_free, (dir / "truth_dwi.nii").string(), NiftiDtype::f64);
  scheme.save((dir / "bvals").string(), (dir / "bvecs").string());
  write_nifti(scalar_volume(spec.dims, res.truth.fa, res.raw.mask),
              (dir / "truth_fa.nii").string(), NiftiDtype::f64);
  write_nifti(scalar_volume(spec.dims, res.truth.md, res.raw.mask),
              (dir / "truth_md.nii").string(), NiftiDtype::f64);

  json prov;
  prov["spec"] = spec.to_json();
  prov["seed"] = spec.seed;
  prov["rng_streams"] = {"rician"};
  prov["scheme_fingerprint"] = fingerprint_hex(scheme.fingerprint());
  prov["frames"] = scheme.size();
  json regions = json::array();
  {
    // Per-voxel region labels, run-length encoded in linear-index order.
    std::string prev;
    std::int64_t run = 0;
    json rle = json::array();
    for (const auto& lab : res.truth.region_of) {
      if (lab == prev) {
        ++run;
      } else {
        if (run > 0) rle.push_back({{"label", prev}, {"count", run}});
        prev = lab;
        run = 1;
      }
    }
    if (run > 0) rle.push_back({{"label", prev}, {"count", run}});
    prov["region_rle"] = rle;
  }
  write_report(prov, (dir / "provenance.json").string());
}

// ---------------------------------------------------------------- harmonize

struct HarmonizeArgs {
  std::string manifest, out_dir, target_bvals, target_bvecs, config;
  std::string combat = "on";
  bool no_eb = false;
  bool allow_extrapolation = false;
};

void cmd_harmonize(const HarmonizeArgs& a, const GlobalOpts& g) {
  const json manifest = load_json_file(a.manifest);
  if (!manifest.contains("datasets") || !manifest.at("datasets").is_array() ||
      manifest.at("datasets").empty())
    throw ValidationError("manifest needs a nonempty \"datasets\" array: " + a.manifest);

  std::vector<DatasetSpec> datasets;
  for (const auto& jd : manifest.at("datasets")) {
    DatasetSpec ds;
    ds.name = jd.value("name", "dataset" + std::to_string(datasets.size()));
    ds.batch = jd.at("batch").get<std::string>();
    ds.scheme = GradientScheme::load(jd.at("bvals").get<std::string>(),
                                     jd.at("bvecs").get<std::string>());
    ds.volume = load_volume(jd.at("volume").get<std::string>(), jd.value("mask", ""));
    datasets.push_back(std::move(ds));
  }

  GradientScheme target;
  if (!a.target_bvals.empty() || !a.target_bvecs.empty()) {
    if (a.target_bvals.empty() || a.target_bvecs.empty())
      throw ValidationError("--target-bvals and --target-bvecs must be given together");
    target = GradientScheme::load(a.target_bvals, a.target_bvecs);
  } else {
    target = hcp_like_scheme();
  }

  PipelineOptions opt;
  FitSettings settings = parse_fit_config(a.config);
  if (settings.auto_k)
    throw ValidationError("harmonize does not support \"auto\" K; fix K in the config");
  opt.config = make_config(settings, -1.0);
  opt.config.b_scale = settings.b_scale;  // <= 0: per-dataset max b
  if (a.combat != "on" && a.combat != "off")
    throw ValidationError("--combat must be 'on' or 'off'");
  opt.combat = a.combat == "on";
  opt.combat_eb = !a.no_eb;
  opt.allow_extrapolation = a.allow_extrapolation;
  opt.threads = g.threads;

  note(g, "harmonizing " + std::to_string(datasets.size()) + " dataset(s)");
  const PipelineResult res = harmonize_pipeline(datasets, target, opt);

  namespace fs = std::filesystem;
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  json prov;
  prov["target_fingerprint"] = fingerprint_hex(target.fingerprint());
  prov["combat"] = res.combat;
  prov["combat_eb"] = opt.combat_eb;
  prov["seed"] = g.seed;
  prov["warnings"] = res.warnings;
  json jds = json::array();
  for (std::size_t i = 0; i < res.datasets.size(); ++i) {
    const auto& d = res.datasets[i];
    const fs::path sub = dir / d.name;
    fs::create_directories(sub);
    write_nifti(scalar_volume(d.original.dims, d.original.fa, d.original.mask),
                (sub / "original_fa.nii").string(), NiftiDtype::f64);
    write_nifti(scalar_volume(d.original.dims, d.original.md, d.original.mask),
                (sub / "original_md.nii").string(), NiftiDtype::f64);
    write_nifti(scalar_volume(d.harmonized.dims, d.harmonized.fa, d.harmonized.mask),
                (sub / "harmonized_fa.nii").string(), NiftiDtype::f64);
    write_nifti(scalar_volume(d.harmonized.dims, d.harmonized.md, d.harmonized.mask),
                (sub / "harmonized_md.nii").string(), NiftiDtype::f64);
    if (res.combat && !res.original_fa_combat.empty()) {
      write_nifti(scalar_volume(d.original.dims, res.original_fa_combat[i], res.common_mask),
                  (sub / "original_fa_combat.nii").string(), NiftiDtype::f64);
      write_nifti(scalar_volume(d.original.dims, res.harmonized_fa_combat[i], res.common_mask),
                  (sub / "harmonized_fa_combat.nii").string(), NiftiDtype::f64);
      write_nifti(scalar_volume(d.original.dims, res.original_md_combat[i], res.common_mask),
                  (sub / "original_md_combat.nii").string(), NiftiDtype::f64);
      write_nifti(scalar_volume(d.original.dims, res.harmonized_md_combat[i], res.common_mask),
                  (sub / "harmonized_md_combat.nii").string(), NiftiDtype::f64);
    }
    json j;
    j["name"] = d.name;
    j["batch"] = d.batch;
    j["scheme_fingerprint"] = fingerprint_hex(d.scheme_fingerprint);
    j["config_fingerprint"] = fingerprint_hex(d.config_fingerprint);
    j["in_sample_mse_log"] = d.in_sample_mse;
    j["clamped_values"] = d.normalize_report.clamped;
    j["masked_out_voxels"] = d.normalize_report.masked_out;
    j["negative_eig_voxels_original"] = d.original.negative_eig_voxels;
    j["negative_eig_voxels_harmonized"] = d.harmonized.negative_eig_voxels;
    j["extrapolated_frames"] = d.extrapolation.flagged_frames;
    jds.push_back(j);
  }
  prov["datasets"] = jds;
  write_report(prov, (dir / "provenance.json").string());
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string predicted, observed, mask, out, csv;
};

void cmd_evaluate(const EvaluateArgs& a, const GlobalOpts&) {
  const SignalVolume pred = read_nifti(a.predicted);
  SignalVolume obs = read_nifti(a.observed);
  if (pred.dims != obs.dims || pred.m != obs.m)
    throw ValidationError("predicted and observed volumes have different shapes");
  std::vector<std::uint8_t> mask(pred.n_voxels(), 1);
  if (!a.mask.empty()) mask = read_mask(a.mask, pred.dims);

  std::vector<double> abs_diffs;
  double ss = 0.0;
  std::size_t cnt = 0;
  for (std::size_t v = 0; v < pred.n_voxels(); ++v) {
    if (!mask[v]) continue;
    const auto col = static_cast<Eigen::Index>(v);
    for (int f = 0; f < pred.m; ++f) {
      const double p = pred.data(f, col), o = obs.data(f, col);
      if (!(p > 0.0) || !(o > 0.0))
        throw ValidationError("nonpositive value at voxel " + std::to_string(v) + " frame " +
                              std::to_string(f));
      const double d = std::log(p) - std::log(o);
      ss += d * d;
      abs_diffs.push_back(std::abs(d));
      ++cnt;
    }
  }
  if (cnt == 0) throw ValidationError("no masked values to evaluate");

  const std::vector<double> probs{0.5, 0.75, 0.9, 0.95, 0.99, 1.0};
  const std::vector<double> qs = quantiles(abs_diffs, probs);

  json report;
  report["mse_log"] = ss / static_cast<double>(cnt);
  report["n_values"] = cnt;
  json qt;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof(key), "q%02d", static_cast<int>(probs[i] * 100));
    qt[key] = qs[i];
  }
  report["abs_log_diff_quantiles"] = qt;
  write_report(report, a.out);

  if (!a.csv.empty()) {
    std::string csv = "metric,value\n";
    char line[128];
    std::snprintf(line, sizeof(line), "mse_log,%.10g\n", ss / static_cast<double>(cnt));
    csv += line;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      std::snprintf(line, sizeof(line), "abs_log_diff_q%02d,%.10g\n",
                    static_cast<int>(probs[i] * 100), qs[i]);
      csv += line;
    }
    write_text(a.csv, csv);
  }
}

// ---------------------------------------------------------------- benchmark

struct BenchmarkArgs {
  std::string dwi, bvals, bvecs, mask, out, report;
  std::string protocols = "table1";
  int replications = 5;
  double test_frac = 0.25;
  std::string config;
};

void cmd_benchmark(const BenchmarkArgs& a, const GlobalOpts& g) {
  if (a.protocols != "table1")
    throw ValidationError("--protocols supports only 'table1'");
  if (a.replications < 1) throw ValidationError("--replications must be >= 1");
  if (!(a.test_frac > 0.0) || a.test_frac >= 1.0)
    throw ValidationError("--test-frac must be in (0, 1)");

  const GradientScheme scheme = GradientScheme::load(a.bvals, a.bvecs);
  SignalVolume raw = load_volume(a.dwi, a.mask);
  const NormalizedVolume norm = normalize_b0(raw, scheme, g.threads);
  const FitSettings settings = parse_fit_config(a.config);
  if (settings.auto_k)
    throw ValidationError("benchmark does not support \"auto\" K; fix K in the config");

  const std::vector<double> shells = norm.scheme.shells();
  if (shells.size() != 3)
    throw ValidationError("table1 protocols need a 3-shell scheme, got " +
                          std::to_string(shells.size()) + " shell(s)");
  std::vector<std::vector<std::size_t>> shell_frames(shells.size());
  for (std::size_t i = 0; i < norm.scheme.size(); ++i)
    for (std::size_t s = 0; s < shells.size(); ++s)
      if (norm.scheme.b(i) == shells[s]) shell_frames[s].push_back(i);

  std::vector<std::size_t> masked;
  for (std::size_t v = 0; v < norm.volume.n_voxels(); ++v)
    if (norm.volume.mask[v]) masked.push_back(v);
  if (masked.empty()) throw ValidationError("no masked voxels to benchmark");

  const CounterRng split_rng(g.seed, "split");
  const CounterRng sub_rng(g.seed, "subsample");

  std::string csv = "protocol,replication,frames_train,frames_test,polyrbf_mse,baseline_mse\n";
  json per_protocol = json::object();

  for (int rep = 0; rep < a.replications; ++rep) {
    // Shell-stratified 75:25-style split of the b>0 frames.
    std::vector<std::size_t> test_idx;
    std::vector<std::vector<std::size_t>> train_pool(shells.size());
    for (std::size_t s = 0; s < shells.size(); ++s) {
      std::vector<std::size_t> order = shell_frames[s];
      split_rng.shuffle(order, (static_cast<std::uint64_t>(rep) << 32) + (s << 20));
      const auto n_test = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(a.test_frac * order.size())));
      for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_test ? test_idx : train_pool[s]).push_back(order[i]);
    }
    std::sort(test_idx.begin(), test_idx.end());
    const GradientScheme test_scheme = norm.scheme.subset(test_idx);

    for (int prot = 1; prot <= 6; ++prot) {
      const auto counts = table1_counts(prot);
      std::vector<std::size_t> train_idx;
      for (std::size_t s = 0; s < shells.size(); ++s) {
        const int cnt = counts[s];
        if (static_cast<std::size_t>(cnt) > train_pool[s].size())
          throw ValidationError("protocol " + std::to_string(prot) + " needs " +
                                std::to_string(cnt) + " directions on shell " +
                                std::to_string(shells[s]) + " but only " +
                                std::to_string(train_pool[s].size()) + " remain after the split");
        std::vector<std::size_t> pool = train_pool[s];
        sub_rng.shuffle(pool, (static_cast<std::uint64_t>(rep) << 40) +
                                  (static_cast<std::uint64_t>(prot) << 20) + (s << 8));
        pool.resize(static_cast<std::size_t>(cnt));
        std::sort(pool.begin(), pool.end());
        train_idx.insert(train_idx.end(), pool.begin(), pool.end());
      }
      std::sort(train_idx.begin(), train_idx.end());
      const GradientScheme train_scheme = norm.scheme.subset(train_idx);

      BasisConfig cfg = make_config(settings, train_scheme.max_b());
      const DesignMatrix design = design_matrix(train_scheme, cfg);
      const Projector projector = build_projector(design, cfg.ridge_d);
      const DesignMatrix test_design = design_matrix(test_scheme, cfg);

      double ss_poly = 0.0, ss_base = 0.0;
      std::size_t cnt_all = 0;
      for (std::size_t v : masked) {
        const auto col = static_cast<Eigen::Index>(v);
        Eigen::VectorXd y_tr(train_idx.size()), s_tr(train_idx.size());
        for (std::size_t i = 0; i < train_idx.size(); ++i) {
          s_tr(static_cast<Eigen::Index>(i)) =
              norm.volume.data(static_cast<Eigen::Index>(train_idx[i]), col);
          y_tr(static_cast<Eigen::Index>(i)) = std::log(s_tr(static_cast<Eigen::Index>(i)));
        }
        const Eigen::VectorXd beta = projector.p * y_tr;
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
          const double obs_log =
              std::log(norm.volume.data(static_cast<Eigen::Index>(test_idx[i]), col));
          const double pred_log = test_design.x.row(static_cast<Eigen::Index>(i)).dot(beta);
          ss_poly += (pred_log - obs_log) * (pred_log - obs_log);
          const double base = std::log(baseline_predict(train_scheme, s_tr,
                                                        test_scheme.b(i), test_scheme.dir(i)));
          ss_base += (base - obs_log) * (base - obs_log);
          ++cnt_all;
        }
      }
      const double mse_poly = ss_poly / static_cast<double>(cnt_all);
      const double mse_base = ss_base / static_cast<double>(cnt_all);
      char line[256];
      std::snprintf(line, sizeof(line), "%d,%d,%zu,%zu,%.10g,%.10g\n", prot, rep,
                    train_idx.size(), test_idx.size(), mse_poly, mse_base);
      csv += line;
      per_protocol[std::to_string(prot)].push_back(
          {{"replication", rep}, {"polyrbf_mse", mse_poly}, {"baseline_mse", mse_base}});
    }
  }
  write_text(a.out, csv);
  if (!a.report.empty()) {
    json report;
    report["protocols"] = per_protocol;
    report["replications"] = a.replications;
    report["test_frac"] = a.test_frac;
    report["seed"] = g.seed;
    report["rng_streams"] = {"split", "subsample"};
    write_report(report, a.report);
  }
}

} // namespace

int main(int argc, char** argv) {
  t_start = std::chrono::steady_clock::now();
  CLI::App app{"Poly-RBF q-space modeling, prediction, and harmonization for diffusion MRI"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "RNG seed; all randomness derives from it via named streams");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");
  app.add_flag("--verbose", g.verbose, "progress notes on stderr");

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "fit the model voxel-wise, write a fit artifact");
  fit->add_option("--dwi", fit_args.dwi, "4-D NIfTI volume")->required();
  fit->add_option("--bvals", fit_args.bvals, "FSL bvals")->required();
  fit->add_option("--bvecs", fit_args.bvecs, "FSL bvecs")->required();
  fit->add_option("--mask", fit_args.mask, "binary mask NIfTI");
  fit->add_option("--config", fit_args.config, "JSON: n, k|\"auto\", ridge_d, taper_mult");
  fit->add_option("--out", fit_args.out, "fit artifact path")->required();
  fit->add_option("--report", fit_args.report, "JSON fit report");

  PredictArgs pred_args;
  auto* pred = app.add_subcommand("predict", "evaluate a fit artifact on a target scheme");
  pred->add_option("--fit", pred_args.fit, "fit artifact")->required();
  pred->add_option("--bvals", pred_args.bvals, "target bvals")->required();
  pred->add_option("--bvecs", pred_args.bvecs, "target bvecs")->required();
  pred->add_option("--out", pred_args.out, "output NIfTI")->required();
  pred->add_option("--dtype", pred_args.dtype, "float32|float64 (default float64)");
  pred->add_flag("--allow-extrapolation", pred_args.allow_extrapolation,
                 "downgrade extrapolation errors to warnings");
  pred->add_option("--report", pred_args.report, "JSON prediction report");

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "generate a multi-tensor phantom");
  sim->add_option("--spec", sim_args.spec, "phantom spec JSON")->required();
  sim->add_option("--bvals", sim_args.bvals, "scheme bvals (default: built-in 3x90 + 6 b0)");
  sim->add_option("--bvecs", sim_args.bvecs, "scheme bvecs");
  sim->add_option("--out-dir", sim_args.out_dir, "output directory")->required();

  HarmonizeArgs harm_args;
  auto* harm = app.add_subcommand("harmonize", "run the five-step harmonization pipeline");
  harm->add_option("--manifest", harm_args.manifest, "dataset manifest JSON")->required();
  harm->add_option("--out-dir", harm_args.out_dir, "output directory")->required();
  harm->add_option("--target-bvals", harm_args.target_bvals, "target bvals (default built-in)");
  harm->add_option("--target-bvecs", harm_args.target_bvecs, "target bvecs");
  harm->add_option("--combat", harm_args.combat, "on|off (default on)");
  harm->add_flag("--no-eb", harm_args.no_eb, "disable empirical-Bayes shrinkage in ComBat");
  harm->add_flag("--allow-extrapolation", harm_args.allow_extrapolation,
                 "downgrade extrapolation errors to warnings");
  harm->add_option("--config", harm_args.config, "fit config JSON");

  EvaluateArgs eval_args;
  auto* eval = app.add_subcommand("evaluate", "log-scale error metrics between two volumes");
  eval->add_option("--predicted", eval_args.predicted, "predicted NIfTI")->required();
  eval->add_option("--observed", eval_args.observed, "observed/truth NIfTI")->required();
  eval->add_option("--mask", eval_args.mask, "binary mask NIfTI");
  eval->add_option("--out", eval_args.out, "JSON report")->required();
  eval->add_option("--csv", eval_args.csv, "CSV report");

  BenchmarkArgs bench_args;
  auto* bench = app.add_subcommand("benchmark",
                                   "held-out prediction benchmark against the baseline");
  bench->add_option("--dwi", bench_args.dwi, "4-D NIfTI volume")->required();
  bench->add_option("--bvals", bench_args.bvals, "FSL bvals")->required();
  bench->add_option("--bvecs", bench_args.bvecs, "FSL bvecs")->required();
  bench->add_option("--mask", bench_args.mask, "binary mask NIfTI");
  bench->add_option("--protocols", bench_args.protocols, "protocol set (table1)");
  bench->add_option("--replications", bench_args.replications, "subsample replications");
  bench->add_option("--test-frac", bench_args.test_frac, "held-out fraction per shell");
  bench->add_option("--config", bench_args.config, "fit config JSON");
  bench->add_option("--out", bench_args.out, "CSV results")->required();
  bench->add_option("--report", bench_args.report, "JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) cmd_fit(fit_args, g);
    if (pred->parsed()) cmd_predict(pred_args, g);
    if (sim->parsed()) cmd_simulate(sim_args, g, app.count("--seed") > 0);
    if (harm->parsed()) cmd_harmonize(harm_args, g);
    if (eval->parsed()) cmd_evaluate(eval_args, g);
    if (bench->parsed()) cmd_benchmark(bench_args, g);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
