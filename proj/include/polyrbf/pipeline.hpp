#pragma once

#include <map>
#include <string>
#include <vector>

#include "polyrbf/combat.hpp"
#include "polyrbf/dti.hpp"
#include "polyrbf/estimator.hpp"
#include "polyrbf/predictor.hpp"
#include "polyrbf/volume.hpp"

namespace polyrbf {

struct DatasetSpec {
  std::string name;
  std::string batch;  // ComBat batch label, e.g. "protocolA/scanner1"
  SignalVolume volume;
  GradientScheme scheme;
};

struct DatasetResult {
  std::string name;
  std::string batch;
  NormalizeReport normalize_report;
  ExtrapolationReport extrapolation;
  FeatureVolumes original;    // features on the input protocol
  FeatureVolumes harmonized;  // features on the target protocol predictions
  double in_sample_mse = 0.0;
  std::uint64_t scheme_fingerprint = 0;
  std::uint64_t config_fingerprint = 0;
};

struct PipelineResult {
  std::vector<DatasetResult> datasets;
  std::vector<std::uint8_t> common_mask;  // intersection across datasets
  bool combat = false;
  // ComBat-adjusted per-dataset feature maps (values only on common mask)
  std::vector<Eigen::VectorXd> original_fa_combat, harmonized_fa_combat;
  std::vector<Eigen::VectorXd> original_md_combat, harmonized_md_combat;
  std::vector<std::string> warnings;
};

struct PipelineOptions {
  BasisConfig config;  // b_scale <= 0 selects per-dataset max training b
  bool combat = true;
  bool combat_eb = true;
  bool allow_extrapolation = false;
  int threads = 1;
};

// Five-step harmonization: normalize, fit (one shared projector per distinct
// scheme/config), predict onto the target scheme, extract DTI features, and
// optionally ComBat the pooled features across datasets. Errors are tagged
// with the stage and dataset that raised them.
PipelineResult harmonize_pipeline(const std::vector<DatasetSpec>& datasets,
                                  const GradientScheme& target, const PipelineOptions& opt);

} // namespace polyrbf
