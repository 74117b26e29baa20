#include "polyrbf/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace polyrbf {

namespace {

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

std::uint16_t bswap(std::uint16_t v) { return std::uint16_t((v >> 8) | (v << 8)); }
std::uint32_t bswap(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}
std::uint64_t bswap(std::uint64_t v) {
  return (std::uint64_t(bswap(std::uint32_t(v))) << 32) | bswap(std::uint32_t(v >> 32));
}

void swap16(std::int16_t& v) {
  v = std::bit_cast<std::int16_t>(bswap(std::bit_cast<std::uint16_t>(v)));
}
void swap32(std::int32_t& v) {
  v = std::bit_cast<std::int32_t>(bswap(std::bit_cast<std::uint32_t>(v)));
}
void swap32(float& v) { v = std::bit_cast<float>(bswap(std::bit_cast<std::uint32_t>(v))); }

void swap_header(NiftiHeader& h) {
  swap32(h.sizeof_hdr);
  swap32(h.extents);
  swap16(h.session_error);
  for (auto& d : h.dim) swap16(d);
  swap32(h.intent_p1);
  swap32(h.intent_p2);
  swap32(h.intent_p3);
  swap16(h.intent_code);
  swap16(h.datatype);
  swap16(h.bitpix);
  swap16(h.slice_start);
  for (auto& p : h.pixdim) swap32(p);
  swap32(h.vox_offset);
  swap32(h.scl_slope);
  swap32(h.scl_inter);
  swap16(h.slice_end);
  swap32(h.cal_max);
  swap32(h.cal_min);
  swap32(h.slice_duration);
  swap32(h.toffset);
  swap32(h.glmax);
  swap32(h.glmin);
  swap16(h.qform_code);
  swap16(h.sform_code);
  swap32(h.quatern_b);
  swap32(h.quatern_c);
  swap32(h.quatern_d);
  swap32(h.qoffset_x);
  swap32(h.qoffset_y);
  swap32(h.qoffset_z);
  for (auto& f : h.srow_x) swap32(f);
  for (auto& f : h.srow_y) swap32(f);
  for (auto& f : h.srow_z) swap32(f);
}

int dtype_size(std::int16_t code) {
  switch (static_cast<NiftiDtype>(code)) {
    case NiftiDtype::u8: return 1;
    case NiftiDtype::i16: return 2;
    case NiftiDtype::i32: return 4;
    case NiftiDtype::f32: return 4;
    case NiftiDtype::f64: return 8;
  }
  return 0;
}

template <typename T>
double decode_at(const char* buf, std::size_t i, bool swapped) {
  T v;
  std::memcpy(&v, buf + i * sizeof(T), sizeof(T));
  if (swapped && sizeof(T) > 1) {
    if constexpr (sizeof(T) == 2)
      v = std::bit_cast<T>(bswap(std::bit_cast<std::uint16_t>(v)));
    else if constexpr (sizeof(T) == 4)
      v = std::bit_cast<T>(bswap(std::bit_cast<std::uint32_t>(v)));
    else if constexpr (sizeof(T) == 8)
      v = std::bit_cast<T>(bswap(std::bit_cast<std::uint64_t>(v)));
  }
  return static_cast<double>(v);
}

} // namespace

SignalVolume read_nifti(const std::string& path) {
  if (path.size() > 3 && path.substr(path.size() - 3) == ".gz")
    throw IOError("compressed NIfTI is not supported, decompress first: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open NIfTI file: " + path);

  NiftiHeader h{};
  if (!in.read(reinterpret_cast<char*>(&h), sizeof(h)))
    throw NiftiTruncatedError("file shorter than the 348-byte NIfTI-1 header: " + path);

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    std::int32_t probe = h.sizeof_hdr;
    swap32(probe);
    if (probe != 348)
      throw NiftiMagicError("not a NIfTI-1 file (sizeof_hdr != 348): " + path);
    swapped = true;
    swap_header(h);
  }
  if (!(h.magic[0] == 'n' && h.magic[1] == '+' && h.magic[2] == '1' && h.magic[3] == '\0'))
    throw NiftiMagicError("bad NIfTI magic (expected single-file \"n+1\"): " + path);

  const int esize = dtype_size(h.datatype);
  if (esize == 0)
    throw NiftiDtypeError("unsupported NIfTI datatype code " + std::to_string(h.datatype) +
                          " in " + path);

  if (h.dim[0] < 3 || h.dim[0] > 4)
    throw ValidationError("expected a 3-D or 4-D NIfTI volume, got dim[0]=" +
                          std::to_string(h.dim[0]) + " in " + path);
  const int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  const int nt = h.dim[0] == 4 ? std::max<std::int16_t>(h.dim[4], 1) : 1;
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw ValidationError("nonpositive NIfTI spatial dims in " + path);

  const auto offset = static_cast<std::int64_t>(h.vox_offset);
  if (offset < 348) throw ValidationError("vox_offset below 348 in " + path);

  SignalVolume vol = make_volume({nx, ny, nz}, nt);
  for (int i = 0; i < 8; ++i) vol.pixdim[i] = h.pixdim[i];

  const std::size_t nvox = vol.n_voxels();
  const std::size_t count = nvox * static_cast<std::size_t>(nt);
  std::vector<char> buf(count * static_cast<std::size_t>(esize));
  in.seekg(offset, std::ios::beg);
  if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())))
    throw NiftiTruncatedError("data section truncated (need " + std::to_string(buf.size()) +
                              " bytes at offset " + std::to_string(offset) + "): " + path);

  const float slope = h.scl_slope;
  const float inter = h.scl_inter;
  const bool rescale = (slope != 0.f && slope != 1.f) || inter != 0.f;
  auto store = [&](auto tag) {
    using T = decltype(tag);
    for (int t = 0; t < nt; ++t)
      for (std::size_t v = 0; v < nvox; ++v) {
        double val = decode_at<T>(buf.data(), v + nvox * t, swapped);
        if (rescale) val = val * (slope == 0.f ? 1.0 : double(slope)) + double(inter);
        vol.data(t, static_cast<Eigen::Index>(v)) = val;
      }
  };
  switch (static_cast<NiftiDtype>(h.datatype)) {
    case NiftiDtype::u8: store(std::uint8_t{}); break;
    case NiftiDtype::i16: store(std::int16_t{}); break;
    case NiftiDtype::i32: store(std::int32_t{}); break;
    case NiftiDtype::f32: store(float{}); break;
    case NiftiDtype::f64: store(double{}); break;
  }
  return vol;
}

void write_nifti(const SignalVolume& volume, const std::string& path, NiftiDtype dtype) {
  volume.validate();
  if (dtype != NiftiDtype::f32 && dtype != NiftiDtype::f64)
    throw NiftiDtypeError("write supports float32/float64 only");

  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 4;
  h.dim[1] = static_cast<std::int16_t>(volume.dims[0]);
  h.dim[2] = static_cast<std::int16_t>(volume.dims[1]);
  h.dim[3] = static_cast<std::int16_t>(volume.dims[2]);
  h.dim[4] = static_cast<std::int16_t>(volume.m);
  h.dim[5] = h.dim[6] = h.dim[7] = 1;
  h.datatype = static_cast<std::int16_t>(dtype);
  h.bitpix = dtype == NiftiDtype::f32 ? 32 : 64;
  for (int i = 0; i < 8; ++i) h.pixdim[i] = volume.pixdim[i];
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.scl_inter = 0.f;
  std::snprintf(h.descrip, sizeof(h.descrip), "polyrbf");
  h.magic[0] = 'n';
  h.magic[1] = '+';
  h.magic[2] = '1';
  h.magic[3] = '\0';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char ext[4] = {0, 0, 0, 0};
  out.write(ext, 4);

  const std::size_t nvox = volume.n_voxels();
  if (dtype == NiftiDtype::f32) {
    std::vector<float> buf(nvox * static_cast<std::size_t>(volume.m));
    for (int t = 0; t < volume.m; ++t)
      for (std::size_t v = 0; v < nvox; ++v)
        buf[v + nvox * t] = static_cast<float>(volume.data(t, static_cast<Eigen::Index>(v)));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    std::vector<double> buf(nvox * static_cast<std::size_t>(volume.m));
    for (int t = 0; t < volume.m; ++t)
      for (std::size_t v = 0; v < nvox; ++v)
        buf[v + nvox * t] = volume.data(t, static_cast<Eigen::Index>(v));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!out) throw IOError("write failed: " + path);
}

std::vector<std::uint8_t> read_mask(const std::string& path,
                                    const std::array<int, 3>& expected_dims) {
  const SignalVolume vol = read_nifti(path);
  if (vol.dims != expected_dims)
    throw ValidationError("mask dims " + std::to_string(vol.dims[0]) + "x" +
                          std::to_string(vol.dims[1]) + "x" + std::to_string(vol.dims[2]) +
                          " do not match volume dims in " + path);
  std::vector<std::uint8_t> mask(vol.n_voxels());
  for (std::size_t v = 0; v < mask.size(); ++v)
    mask[v] = vol.data(0, static_cast<Eigen::Index>(v)) > 0.0 ? 1 : 0;
  return mask;
}

} // namespace polyrbf
