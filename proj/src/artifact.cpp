#include "polyrbf/artifact.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <vector>

#include "polyrbf/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "fit artifacts are little-endian; big-endian hosts are unsupported");

namespace polyrbf {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'B', 'F'};
constexpr int kVersion = 1;

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << fp;
  return os.str();
}

std::uint64_t fingerprint_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

} // namespace

void save_fit(const FitVolume& fit, const std::string& path) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["dims"] = fit.dims;
  header["n_obs"] = fit.n_obs;
  header["n_masked"] = fit.voxels.size();
  header["nk"] = fit.betas.rows();
  header["scheme_fingerprint"] = fingerprint_hex(fit.scheme_fingerprint);
  header["train_max_b"] = fit.train_max_b;
  header["config"] = fit.config.to_json();
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  const auto len = static_cast<std::uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(fit.mask.data()),
            static_cast<std::streamsize>(fit.mask.size()));
  out.write(reinterpret_cast<const char*>(fit.betas.data()),
            static_cast<std::streamsize>(sizeof(double) * fit.betas.size()));
  out.write(reinterpret_cast<const char*>(fit.residual_variance.data()),
            static_cast<std::streamsize>(sizeof(double) * fit.residual_variance.size()));
  if (!out) throw IOError("write failed: " + path);
}

FitVolume load_fit(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open fit artifact: " + path);

  char magic[4];
  std::uint32_t len = 0;
  if (!in.read(magic, 4) || !in.read(reinterpret_cast<char*>(&len), 4))
    throw IOError("truncated fit artifact: " + path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IOError("not a fit artifact (bad magic): " + path);

  std::string hs(len, '\0');
  if (!in.read(hs.data(), len)) throw IOError("truncated fit-artifact header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IOError("corrupt fit-artifact header in " + path + ": " + e.what());
  }

  FitVolume fit;
  try {
    if (header.at("version").get<int>() != kVersion)
      throw ValidationError("unsupported fit-artifact version " +
                            std::to_string(header.at("version").get<int>()) + " in " + path);
    const auto d = header.at("dims");
    fit.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    fit.n_obs = header.at("n_obs").get<int>();
    fit.train_max_b = header.at("train_max_b").get<double>();
    fit.scheme_fingerprint =
        fingerprint_from_hex(header.at("scheme_fingerprint").get<std::string>());
    fit.config = BasisConfig::from_json(header.at("config"));
    const auto n_masked = header.at("n_masked").get<std::size_t>();
    const auto nk = header.at("nk").get<Eigen::Index>();

    const std::size_t nvox = static_cast<std::size_t>(fit.dims[0]) * fit.dims[1] * fit.dims[2];
    fit.mask.resize(nvox);
    if (!in.read(reinterpret_cast<char*>(fit.mask.data()),
                 static_cast<std::streamsize>(nvox)))
      throw IOError("truncated fit-artifact mask: " + path);
    for (std::size_t v = 0; v < nvox; ++v)
      if (fit.mask[v]) fit.voxels.push_back(v);
    if (fit.voxels.size() != n_masked)
      throw ValidationError("fit-artifact mask does not match recorded voxel count in " + path);

    fit.betas.resize(nk, static_cast<Eigen::Index>(n_masked));
    if (!in.read(reinterpret_cast<char*>(fit.betas.data()),
                 static_cast<std::streamsize>(sizeof(double) * fit.betas.size())))
      throw IOError("truncated fit-artifact coefficients: " + path);
    fit.residual_variance.resize(static_cast<Eigen::Index>(n_masked));
    if (!in.read(reinterpret_cast<char*>(fit.residual_variance.data()),
                 static_cast<std::streamsize>(sizeof(double) * fit.residual_variance.size())))
      throw IOError("truncated fit-artifact residuals: " + path);
  } catch (const nlohmann::json::exception& e) {
    throw IOError("invalid fit-artifact header in " + path + ": " + e.what());
  }
  return fit;
}

} // namespace polyrbf
