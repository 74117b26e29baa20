#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "polyrbf/gradients.hpp"
#include "polyrbf/rng.hpp"
#include "polyrbf/volume.hpp"

namespace polyrbf {

struct TensorCompartment {
  double weight = 1.0;
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity() * 1e-3;  // mm^2/s
  void validate() const;  // symmetric positive-definite, weight in (0, 1]
};

using VoxelModel = std::vector<TensorCompartment>;

// S = sum_f w_f exp(-b p' D_f p); weights must sum to 1.
double multi_tensor_signal(const VoxelModel& compartments, double b,
                           const Eigen::Vector3d& p);

// Magnitude noise: sqrt((S + e1)^2 + e2^2), e1/e2 ~ N(0, sigma^2) drawn from
// the counter, so results are independent of evaluation order.
double add_rician_noise(double s, double sigma, const CounterRng& rng,
                        std::uint64_t counter);

struct PhantomRegion {
  std::string label;
  std::array<int, 6> box{0, 0, 0, 0, 0, 0};  // half-open [x0,x1) x [y0,y1) x [z0,z1)
  VoxelModel model;
};

struct PhantomSpec {
  std::array<int, 3> dims{16, 16, 16};
  double s0 = 1000.0;
  double sigma = 0.0;  // Rician sigma relative to s0
  std::uint64_t seed = 0;
  std::vector<PhantomRegion> regions;  // first match wins; must tile the grid

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
};

struct PhantomTruth {
  SignalVolume noise_free;             // raw scale (S0 included)
  std::vector<std::string> region_of;  // per voxel
  Eigen::VectorXd fa;                  // of the weighted-mean tensor
  Eigen::VectorXd md;
};

struct PhantomResult {
  SignalVolume raw;
  PhantomTruth truth;
};

PhantomResult generate_phantom(const PhantomSpec& spec, const GradientScheme& scheme,
                               int threads = 1);

// Rodrigues axis-angle rotation.
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle);

// Multi-shell scheme: n_b0 b=0 frames first, then each shell's directions as
// a contiguous block of rotated Fibonacci lattice points.
GradientScheme multi_shell_scheme(const std::vector<double>& shells, int dirs_per_shell,
                                  int n_b0,
                                  const std::vector<Eigen::Matrix3d>& shell_rotations = {});
// 3 shells (1000/2000/3000) x 90 directions + 6 b0 frames.
GradientScheme hcp_like_scheme();

// Per-shell direction counts (b=1000, 2000, 3000) of the six subsampling
// protocols used in the prediction benchmark.
std::array<int, 3> table1_counts(int protocol);

// Frame indices selecting all b0 frames plus counts[s] evenly-strided
// directions from each shell of a multi_shell_scheme layout.
std::vector<std::size_t> protocol_subset(int n_b0, int dirs_per_shell,
                                         const std::vector<int>& counts);

// Same selection with seeded uniform sampling instead of strides.
std::vector<std::size_t> random_protocol_subset(int n_b0, int dirs_per_shell,
                                                const std::vector<int>& counts,
                                                const CounterRng& rng,
                                                std::uint64_t counter_base);

} // namespace polyrbf
