#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "polyrbf/gradients.hpp"

namespace polyrbf {

// 4-D signal volume stored voxel-major: column v of `data` holds the M frame
// intensities of voxel v, with v = x + nx*(y + ny*z).
struct SignalVolume {
  std::array<int, 3> dims{0, 0, 0};
  int m = 0;
  Eigen::MatrixXd data;             // m x (nx*ny*nz)
  std::vector<std::uint8_t> mask;   // nx*ny*nz, 1 = in-mask
  std::array<float, 8> pixdim{0.f, 1.f, 1.f, 1.f, 1.f, 0.f, 0.f, 0.f};
  bool normalized = false;
  std::uint64_t scheme_fingerprint = 0;

  std::size_t n_voxels() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t linear_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
  // Throws ValidationError on dim/data/mask inconsistencies.
  void validate() const;
};

SignalVolume make_volume(std::array<int, 3> dims, int m);

struct NormalizeReport {
  std::int64_t clamped = 0;     // nonpositive post-division values raised to epsilon
  std::int64_t masked_out = 0;  // voxels dropped because mean b0 <= 0
  double epsilon = 1e-6;
  std::vector<int> dropped_frames;  // b0 frame indices removed from the volume
};

struct NormalizedVolume {
  SignalVolume volume;    // b>0 frames only, normalized flag set
  GradientScheme scheme;  // matching b>0 subset of the input scheme
  NormalizeReport report;
};

// Divides each b>0 frame by the voxel's mean b0 intensity, drops b0 frames,
// clamps nonpositive results to epsilon, and masks out voxels whose mean b0
// is nonpositive.
NormalizedVolume normalize_b0(const SignalVolume& raw, const GradientScheme& scheme,
                              int threads = 1);

} // namespace polyrbf
