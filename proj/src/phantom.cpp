#include "polyrbf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "polyrbf/basis.hpp"
#include "polyrbf/errors.hpp"
#include "polyrbf/parallel.hpp"

namespace polyrbf {

void TensorCompartment::validate() const {
  if (!(weight > 0.0) || weight > 1.0)
    throw ValidationError("compartment weight must be in (0, 1]");
  if (!d.isApprox(d.transpose(), 1e-12))
    throw ValidationError("diffusivity tensor must be symmetric");
  const Eigen::Vector3d lam =
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(d, Eigen::EigenvaluesOnly).eigenvalues();
  if (!(lam.minCoeff() > 0.0))
    throw ValidationError("diffusivity tensor must be positive-definite");
}

namespace {

void validate_model(const VoxelModel& model) {
  if (model.empty()) throw ValidationError("voxel model needs at least one compartment");
  double wsum = 0.0;
  for (const auto& c : model) {
    c.validate();
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw ValidationError("compartment weights must sum to 1, got " + std::to_string(wsum));
}

double signal_unchecked(const VoxelModel& model, double b, const Eigen::Vector3d& p) {
  double s = 0.0;
  for (const auto& c : model) s += c.weight * std::exp(-b * p.dot(c.d * p));
  return s;
}

} // namespace

double multi_tensor_signal(const VoxelModel& compartments, double b,
                           const Eigen::Vector3d& p) {
  if (b < 0.0) throw ValidationError("b must be >= 0");
  validate_model(compartments);
  return signal_unchecked(compartments, b, p);
}

double add_rician_noise(double s, double sigma, const CounterRng& rng,
                        std::uint64_t counter) {
  if (sigma < 0.0) throw ValidationError("sigma must be >= 0");
  if (sigma == 0.0) return s;
  const auto [e1, e2] = rng.gaussian_pair(counter);
  const double re = s + sigma * e1;
  const double im = sigma * e2;
  return std::sqrt(re * re + im * im);
}

void PhantomSpec::validate() const {
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    throw ValidationError("phantom dims must be positive");
  if (!(s0 > 0.0)) throw ValidationError("S0 must be positive");
  if (sigma < 0.0) throw ValidationError("sigma must be >= 0");
  if (regions.empty()) throw ValidationError("phantom needs at least one region");
  for (const auto& r : regions) {
    const auto& b = r.box;
    if (b[0] < 0 || b[1] > dims[0] || b[2] < 0 || b[3] > dims[1] || b[4] < 0 ||
        b[5] > dims[2] || b[0] >= b[1] || b[2] >= b[3] || b[4] >= b[5])
      throw ValidationError("region '" + r.label + "' box is empty or outside the grid");
    validate_model(r.model);
  }
  // Regions must tile the grid (first-match-wins overlap is fine).
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        bool covered = false;
        for (const auto& r : regions)
          if (x >= r.box[0] && x < r.box[1] && y >= r.box[2] && y < r.box[3] &&
              z >= r.box[4] && z < r.box[5]) {
            covered = true;
            break;
          }
        if (!covered)
          throw ValidationError("voxel (" + std::to_string(x) + "," + std::to_string(y) +
                                "," + std::to_string(z) + ") not covered by any region");
      }
}

nlohmann::json PhantomSpec::to_json() const {
  nlohmann::json j;
  j["dims"] = dims;
  j["s0"] = s0;
  j["sigma"] = sigma;
  j["seed"] = seed;
  j["regions"] = nlohmann::json::array();
  for (const auto& r : regions) {
    nlohmann::json jr;
    jr["label"] = r.label;
    jr["box"] = r.box;
    jr["compartments"] = nlohmann::json::array();
    for (const auto& c : r.model) {
      nlohmann::json jc;
      jc["weight"] = c.weight;
      // Serialized as a full symmetric matrix (row-major upper triangle).
      jc["d"] = {c.d(0, 0), c.d(0, 1), c.d(0, 2), c.d(1, 1), c.d(1, 2), c.d(2, 2)};
      jr["compartments"].push_back(jc);
    }
    j["regions"].push_back(jr);
  }
  return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec spec;
  if (j.contains("dims")) {
    const auto d = j.at("dims");
    if (!d.is_array() || d.size() != 3) throw ValidationError("phantom dims must be [nx,ny,nz]");
    spec.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
  }
  spec.s0 = j.value("s0", 1000.0);
  spec.sigma = j.value("sigma", 0.0);
  spec.seed = j.value("seed", std::uint64_t{0});
  if (!j.contains("regions")) throw ValidationError("phantom spec needs \"regions\"");
  for (const auto& jr : j.at("regions")) {
    PhantomRegion r;
    r.label = jr.value("label", std::string("region"));
    const auto b = jr.at("box");
    if (!b.is_array() || b.size() != 6)
      throw ValidationError("region box must be [x0,x1,y0,y1,z0,z1]");
    for (int i = 0; i < 6; ++i) r.box[i] = b[i].get<int>();
    for (const auto& jc : jr.at("compartments")) {
      TensorCompartment c;
      c.weight = jc.at("weight").get<double>();
      if (jc.contains("d")) {
        const auto dd = jc.at("d");
        if (!dd.is_array() || dd.size() != 6)
          throw ValidationError("compartment d must be 6 upper-triangle values");
        c.d << dd[0].get<double>(), dd[1].get<double>(), dd[2].get<double>(),
            dd[1].get<double>(), dd[3].get<double>(), dd[4].get<double>(),
            dd[2].get<double>(), dd[4].get<double>(), dd[5].get<double>();
      } else {
        const auto ev = jc.at("eigenvalues");
        const auto eu = jc.value("euler", std::vector<double>{0.0, 0.0, 0.0});
        if (!ev.is_array() || ev.size() != 3 || eu.size() != 3)
          throw ValidationError("compartment needs 3 eigenvalues and 3 Euler angles");
        // Z-Y-Z Euler rotation applied to the eigenvalue frame.
        const Eigen::Matrix3d rot = axis_angle(Eigen::Vector3d::UnitZ(), eu[0]) *
                                    axis_angle(Eigen::Vector3d::UnitY(), eu[1]) *
                                    axis_angle(Eigen::Vector3d::UnitZ(), eu[2]);
        const Eigen::Vector3d lam(ev[0].get<double>(), ev[1].get<double>(),
                                  ev[2].get<double>());
        c.d = rot * lam.asDiagonal() * rot.transpose();
      }
      r.model.push_back(c);
    }
    spec.regions.push_back(std::move(r));
  }
  spec.validate();
  return spec;
}

PhantomResult generate_phantom(const PhantomSpec& spec, const GradientScheme& scheme,
                               int threads) {
  spec.validate();
  if (scheme.size() == 0) throw ValidationError("empty scheme");

  const auto m = static_cast<int>(scheme.size());
  PhantomResult out;
  out.raw = make_volume(spec.dims, m);
  out.truth.noise_free = make_volume(spec.dims, m);
  const std::size_t nvox = out.raw.n_voxels();
  out.truth.region_of.assign(nvox, "");
  out.truth.fa = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvox));
  out.truth.md = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvox));

  // Resolve first-match region per voxel once.
  std::vector<int> region_of(nvox, -1);
  for (int z = 0; z < spec.dims[2]; ++z)
    for (int y = 0; y < spec.dims[1]; ++y)
      for (int x = 0; x < spec.dims[0]; ++x) {
        const std::size_t v = out.raw.linear_index(x, y, z);
        for (std::size_t r = 0; r < spec.regions.size(); ++r) {
          const auto& b = spec.regions[r].box;
          if (x >= b[0] && x < b[1] && y >= b[2] && y < b[3] && z >= b[4] && z < b[5]) {
            region_of[v] = static_cast<int>(r);
            break;
          }
        }
      }

  const CounterRng rng(spec.seed, "rician");
  const double sigma_raw = spec.sigma * spec.s0;
  parallel_for(nvox, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t v = lo; v < hi; ++v) {
      const auto& region = spec.regions[region_of[v]];
      const auto col = static_cast<Eigen::Index>(v);
      for (int f = 0; f < m; ++f) {
        const double s =
            spec.s0 * signal_unchecked(region.model, scheme.b(f), scheme.dir(f));
        out.truth.noise_free.data(f, col) = s;
        out.raw.data(f, col) = add_rician_noise(
            s, sigma_raw, rng, static_cast<std::uint64_t>(v) * m + f);
      }
      out.truth.region_of[v] = region.label;
      Eigen::Matrix3d deff = Eigen::Matrix3d::Zero();
      for (const auto& c : region.model) deff += c.weight * c.d;
      const Eigen::Vector3d lam =
          Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(deff, Eigen::EigenvaluesOnly)
              .eigenvalues();
      const double mean = lam.mean();
      const double den = lam.squaredNorm();
      out.truth.md(col) = mean;
      out.truth.fa(col) =
          den > 0.0 ? std::sqrt(1.5 * (lam.array() - mean).matrix().squaredNorm() / den) : 0.0;
    }
  });
  return out;
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

GradientScheme multi_shell_scheme(const std::vector<double>& shells, int dirs_per_shell,
                                  int n_b0, const std::vector<Eigen::Matrix3d>& shell_rotations) {
  if (shells.empty() || dirs_per_shell < 1 || n_b0 < 0)
    throw ValidationError("invalid multi-shell scheme parameters");
  if (!shell_rotations.empty() && shell_rotations.size() != shells.size())
    throw ValidationError("need one rotation per shell (or none)");

  const auto m = n_b0 + shells.size() * static_cast<std::size_t>(dirs_per_shell);
  std::vector<double> bvals;
  bvals.reserve(m);
  Eigen::Matrix3Xd bvecs(3, static_cast<Eigen::Index>(m));
  bvecs.setZero();
  for (int i = 0; i < n_b0; ++i) bvals.push_back(0.0);

  const Eigen::Matrix3Xd base = fibonacci_centers(dirs_per_shell);
  Eigen::Index col = n_b0;
  for (std::size_t s = 0; s < shells.size(); ++s) {
    const Eigen::Matrix3Xd dirs =
        shell_rotations.empty() ? base : (shell_rotations[s] * base).eval();
    for (int i = 0; i < dirs_per_shell; ++i) {
      bvals.push_back(shells[s]);
      bvecs.col(col++) = dirs.col(i);
    }
  }
  return GradientScheme(std::move(bvals), std::move(bvecs));
}

GradientScheme hcp_like_scheme() {
  return multi_shell_scheme({1000.0, 2000.0, 3000.0}, 90, 6,
                            {Eigen::Matrix3d::Identity(),
                             axis_angle(Eigen::Vector3d::UnitZ(), 0.41),
                             axis_angle(Eigen::Vector3d::UnitY(), 0.83)});
}

std::array<int, 3> table1_counts(int protocol) {
  switch (protocol) {
    case 1: return {60, 30, 15};
    case 2: return {60, 15, 30};
    case 3: return {30, 60, 15};
    case 4: return {30, 15, 60};
    case 5: return {15, 30, 60};
    case 6: return {15, 60, 30};
  }
  throw ValidationError("protocol must be 1..6, got " + std::to_string(protocol));
}

std::vector<std::size_t> protocol_subset(int n_b0, int dirs_per_shell,
                                         const std::vector<int>& counts) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(n_b0));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t s = 0; s < counts.size(); ++s) {
    const int cnt = counts[s];
    if (cnt < 1 || cnt > dirs_per_shell)
      throw ValidationError("subset count outside [1, dirs_per_shell]");
    const std::size_t base = n_b0 + s * static_cast<std::size_t>(dirs_per_shell);
    for (int j = 0; j < cnt; ++j)
      idx.push_back(base + static_cast<std::size_t>(std::lround(
                               static_cast<double>(j) * dirs_per_shell / cnt)));
  }
  return idx;
}

std::vector<std::size_t> random_protocol_subset(int n_b0, int dirs_per_shell,
                                                const std::vector<int>& counts,
                                                const CounterRng& rng,
                                                std::uint64_t counter_base) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(n_b0));
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t s = 0; s < counts.size(); ++s) {
    const int cnt = counts[s];
    if (cnt < 1 || cnt > dirs_per_shell)
      throw ValidationError("subset count outside [1, dirs_per_shell]");
    std::vector<std::size_t> pool(static_cast<std::size_t>(dirs_per_shell));
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool, counter_base + (s << 32));
    pool.resize(static_cast<std::size_t>(cnt));
    std::sort(pool.begin(), pool.end());
    const std::size_t base = n_b0 + s * static_cast<std::size_t>(dirs_per_shell);
    for (std::size_t j : pool) idx.push_back(base + j);
  }
  return idx;
}

} // namespace polyrbf
