#include "polyrbf/volume.hpp"

#include <string>

#include "polyrbf/errors.hpp"
#include "polyrbf/parallel.hpp"

namespace polyrbf {

void SignalVolume::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw ValidationError("volume dims must be positive, got " + std::to_string(dims[0]) +
                          "x" + std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
  if (m <= 0) throw ValidationError("volume must have at least one frame");
  const auto v = n_voxels();
  if (static_cast<std::size_t>(data.cols()) != v || data.rows() != m)
    throw ValidationError("volume data shape mismatch: expected " + std::to_string(m) +
                          "x" + std::to_string(v) + ", got " + std::to_string(data.rows()) +
                          "x" + std::to_string(data.cols()));
  if (mask.size() != v)
    throw ValidationError("volume mask length " + std::to_string(mask.size()) +
                          " does not match voxel count " + std::to_string(v));
}

SignalVolume make_volume(std::array<int, 3> dims, int m) {
  SignalVolume vol;
  vol.dims = dims;
  vol.m = m;
  vol.data = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(vol.n_voxels()));
  vol.mask.assign(vol.n_voxels(), 1);
  return vol;
}

NormalizedVolume normalize_b0(const SignalVolume& raw, const GradientScheme& scheme,
                              int threads) {
  raw.validate();
  if (raw.normalized) throw ValidationError("volume is already b0-normalized");
  if (static_cast<int>(scheme.size()) != raw.m)
    throw ValidationError("scheme has " + std::to_string(scheme.size()) +
                          " frames but volume has " + std::to_string(raw.m));
  const auto& b0s = scheme.b0_indices();
  if (b0s.empty()) throw ValidationError("b0 normalization requires at least one b=0 frame");

  const std::vector<std::size_t> dwi_idx = scheme.dwi_indices();
  if (dwi_idx.empty()) throw ValidationError("scheme has no b>0 frames to normalize");

  NormalizedVolume out;
  out.report.dropped_frames.assign(b0s.begin(), b0s.end());
  out.scheme = scheme.subset(dwi_idx);

  SignalVolume& vol = out.volume;
  vol.dims = raw.dims;
  vol.m = static_cast<int>(dwi_idx.size());
  vol.pixdim = raw.pixdim;
  vol.mask = raw.mask;
  vol.normalized = true;
  vol.scheme_fingerprint = out.scheme.fingerprint();
  vol.data.resize(vol.m, raw.data.cols());

  const double eps = out.report.epsilon;
  const std::size_t nvox = raw.n_voxels();
  std::vector<std::int64_t> clamped_per_voxel(nvox, 0);
  std::vector<std::uint8_t> dropped(nvox, 0);

  parallel_for(nvox, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t v = lo; v < hi; ++v) {
      const auto col = static_cast<Eigen::Index>(v);
      if (!raw.mask[v]) {
        vol.data.col(col).setOnes();
        continue;
      }
      double mean_b0 = 0.0;
      for (std::size_t i : b0s) mean_b0 += raw.data(static_cast<Eigen::Index>(i), col);
      mean_b0 /= static_cast<double>(b0s.size());
      if (mean_b0 <= 0.0) {
        vol.mask[v] = 0;
        dropped[v] = 1;
        vol.data.col(col).setOnes();
        continue;
      }
      for (int j = 0; j < vol.m; ++j) {
        double s = raw.data(static_cast<Eigen::Index>(dwi_idx[j]), col) / mean_b0;
        if (s <= 0.0) {
          s = eps;
          ++clamped_per_voxel[v];
        }
        vol.data(j, col) = s;
      }
    }
  });

  for (std::size_t v = 0; v < nvox; ++v) {
    out.report.clamped += clamped_per_voxel[v];
    out.report.masked_out += dropped[v];
  }
  return out;
}

} // namespace polyrbf
