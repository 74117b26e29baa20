#include "polyrbf/basis.hpp"

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>
#include <numbers>

#include "polyrbf/errors.hpp"

namespace polyrbf {

namespace {

constexpr double golden = std::numbers::phi;

bool unique_directions(const Eigen::Matrix3Xd& c) {
  for (Eigen::Index i = 0; i < c.cols(); ++i)
    for (Eigen::Index j = i + 1; j < c.cols(); ++j) {
      double d = c.col(i).dot(c.col(j));
      if (d >= 1.0 || d <= -1.0) return false;
    }
  return true;
}

} // namespace

Eigen::Matrix3Xd fibonacci_centers(int n) {
  if (n < 1) throw ValidationError("fibonacci_centers: N must be >= 1");
  Eigen::Matrix3Xd c(3, n);
  std::vector<double> phase(n);
  for (int i = 0; i < n; ++i) phase[i] = 2.0 * std::numbers::pi * i / (golden * golden);
  for (int attempt = 0;; ++attempt) {
    for (int i = 0; i < n; ++i) {
      double z = 1.0 - (2.0 * i + 1.0) / n;
      double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      c.col(i) = Eigen::Vector3d(r * std::cos(phase[i]), r * std::sin(phase[i]), z);
    }
    if (unique_directions(c)) return c;
    if (attempt > 64)
      throw InternalError("fibonacci_centers: uniqueness repair did not converge");
    // Degenerate pair (possible for contrived N): nudge azimuths and retry.
    for (int i = 0; i < n; ++i) phase[i] += 1e-4 * (i + 1);
  }
}

Eigen::Matrix3Xd mirror_centers(const Eigen::Matrix3Xd& centers) {
  Eigen::Matrix3Xd out(3, 2 * centers.cols());
  out.leftCols(centers.cols()) = centers;
  out.rightCols(centers.cols()) = -centers;
  return out;
}

double default_bandwidth(const Eigen::Matrix3Xd& c) {
  if (c.cols() < 2) throw ValidationError("default_bandwidth: need at least 2 centers");
  double sum = 0.0;
  std::int64_t count = 0;
  for (Eigen::Index i = 0; i < c.cols(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (i == j) continue;
      double a = std::numbers::sqrt2 * (c.col(i) - c.col(j)).norm();
      if (a != 0.0) {
        sum += a;
        ++count;
      }
    }
  if (count == 0) throw ValidationError("default_bandwidth: all centers coincide");
  return sum / double(count);
}

double kernel(const Eigen::Vector3d& p, const Eigen::Vector3d& center, double h,
              double taper_mult) {
  if (h <= 0) throw ValidationError("kernel: bandwidth must be positive");
  double chord2 = 2.0 * (1.0 - p.dot(center));
  if (chord2 < 0) chord2 = 0; // guard against rounding above 1
  if (chord2 >= taper_mult * taper_mult * h * h) return 0.0;
  return std::exp(-chord2 / (2.0 * h * h));
}

BasisConfig BasisConfig::make_default(int n, int k) {
  BasisConfig cfg;
  cfg.n = n;
  cfg.k = k;
  cfg.centers = mirror_centers(fibonacci_centers(n));
  cfg.h = default_bandwidth(cfg.centers);
  cfg.validate();
  return cfg;
}

void BasisConfig::validate() const {
  if (n < 1) throw ValidationError("BasisConfig: N must be >= 1");
  if (k < 1) throw ValidationError("BasisConfig: K must be >= 1");
  if (h <= 0) throw ValidationError("BasisConfig: bandwidth must be positive");
  if (taper_mult <= 0) throw ValidationError("BasisConfig: taper_mult must be positive");
  if (b_scale <= 0) throw ValidationError("BasisConfig: b_scale must be positive");
  if (centers.cols() != 2 * Eigen::Index(n))
    throw ValidationError("BasisConfig: expected 2N center columns");
  for (int i = 0; i < n; ++i) {
    if ((centers.col(i) + centers.col(i + n)).norm() != 0.0)
      throw ValidationError("BasisConfig: center " + std::to_string(i) +
                            " is not exactly antipodal to its mirror");
    if (std::abs(centers.col(i).norm() - 1.0) > 1e-12)
      throw ValidationError("BasisConfig: center " + std::to_string(i) + " is not unit-norm");
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double d = centers.col(i).dot(centers.col(j));
      if (d >= 1.0 || d <= -1.0)
        throw ValidationError("BasisConfig: centers " + std::to_string(i) + " and " +
                              std::to_string(j) + " are parallel");
    }
}

std::uint64_t BasisConfig::fingerprint() const {
  std::uint64_t fh = 0xcbf29ce484222325ULL;
  auto feed = [&fh](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      fh ^= (bits >> (8 * i)) & 0xff;
      fh *= 0x100000001b3ULL;
    }
  };
  feed(double(n));
  feed(double(k));
  feed(h);
  feed(taper_mult);
  feed(ridge_d);
  feed(b_scale);
  for (Eigen::Index c = 0; c < centers.cols(); ++c) {
    feed(centers(0, c));
    feed(centers(1, c));
    feed(centers(2, c));
  }
  return fh;
}

nlohmann::json BasisConfig::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["k"] = k;
  j["h"] = h;
  j["taper_mult"] = taper_mult;
  j["ridge_d"] = ridge_d;
  j["b_scale"] = b_scale;
  std::vector<std::vector<double>> cs;
  for (Eigen::Index c = 0; c < centers.cols(); ++c)
    cs.push_back({centers(0, c), centers(1, c), centers(2, c)});
  j["centers"] = cs;
  return j;
}

BasisConfig BasisConfig::from_json(const nlohmann::json& j) {
  BasisConfig cfg;
  cfg.n = j.at("n").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.h = j.at("h").get<double>();
  cfg.taper_mult = j.at("taper_mult").get<double>();
  cfg.ridge_d = j.at("ridge_d").get<double>();
  cfg.b_scale = j.at("b_scale").get<double>();
  auto cs = j.at("centers").get<std::vector<std::vector<double>>>();
  cfg.centers.resize(3, cs.size());
  for (std::size_t c = 0; c < cs.size(); ++c) {
    if (cs[c].size() != 3) throw ValidationError("BasisConfig: malformed center entry");
    cfg.centers.col(c) = Eigen::Vector3d(cs[c][0], cs[c][1], cs[c][2]);
  }
  cfg.validate();
  return cfg;
}

Eigen::VectorXd design_row(double b, const Eigen::Vector3d& p, const BasisConfig& cfg) {
  if (b < 0) throw ValidationError("design_row: negative b-value");
  Eigen::VectorXd row = Eigen::VectorXd::Zero(Eigen::Index(cfg.n) * cfg.k);
  if (b == 0.0) return row;
  Eigen::VectorXd folded(cfg.n);
  for (int l = 0; l < cfg.n; ++l)
    folded[l] = kernel(p, cfg.centers.col(l), cfg.h, cfg.taper_mult) +
                kernel(p, cfg.centers.col(l + cfg.n), cfg.h, cfg.taper_mult);
  double t = b / cfg.b_scale;
  double tk = 1.0;
  for (int k = 0; k < cfg.k; ++k) {
    tk *= t;
    row.segment(Eigen::Index(k) * cfg.n, cfg.n) = tk * folded;
  }
  return row;
}

DesignMatrix design_matrix(const GradientScheme& scheme, const BasisConfig& cfg) {
  if (scheme.size() == 0) throw ValidationError("design_matrix: empty scheme");
  cfg.validate();
  DesignMatrix dm;
  dm.x.resize(scheme.size(), Eigen::Index(cfg.n) * cfg.k);
  for (std::size_t m = 0; m < scheme.size(); ++m) {
    if (scheme.is_b0(m))
      dm.x.row(m).setZero();
    else
      dm.x.row(m) = design_row(scheme.b(m), scheme.dir(m), cfg).transpose();
  }
  dm.scheme_fingerprint = scheme.fingerprint();
  dm.config_fingerprint = cfg.fingerprint();
  return dm;
}

} // namespace polyrbf
