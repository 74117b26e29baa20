#pragma once

#include <string>

#include "polyrbf/errors.hpp"
#include "polyrbf/volume.hpp"

namespace polyrbf {

class NiftiMagicError : public IOError {
public:
  using IOError::IOError;
};
class NiftiDtypeError : public IOError {
public:
  using IOError::IOError;
};
class NiftiTruncatedError : public IOError {
public:
  using IOError::IOError;
};

enum class NiftiDtype : short {
  u8 = 2,
  i16 = 4,
  i32 = 8,
  f32 = 16,
  f64 = 64,
};

// Single-file NIfTI-1 (.nii), either endianness; dtypes uint8/int16/int32/
// float32/float64; scl_slope/scl_inter applied on read (slope 0 means 1).
SignalVolume read_nifti(const std::string& path);

// Writes a single-file NIfTI-1 volume (slope 1, intercept 0, vox_offset 352,
// 4 zero extension-flag bytes). Only float32/float64 output is supported.
void write_nifti(const SignalVolume& volume, const std::string& path,
                 NiftiDtype dtype = NiftiDtype::f32);

// Reads a 3-D (or first-frame 4-D) volume as a binary mask: voxel > 0.
std::vector<std::uint8_t> read_mask(const std::string& path,
                                    const std::array<int, 3>& expected_dims);

} // namespace polyrbf
