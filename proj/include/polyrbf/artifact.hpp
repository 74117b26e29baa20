#pragma once

#include <string>

#include "polyrbf/estimator.hpp"

namespace polyrbf {

// Versioned binary fit container: "PRBF" magic, uint32 little-endian JSON
// header length, JSON header (version, dims, counts, basis config, scheme
// fingerprint, training max b), then mask bytes, float64 betas (voxel-major
// columns) and float64 residual variances.
void save_fit(const FitVolume& fit, const std::string& path);
FitVolume load_fit(const std::string& path);

} // namespace polyrbf
