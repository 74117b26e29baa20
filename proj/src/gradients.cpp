#include "polyrbf/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "polyrbf/errors.hpp"

namespace polyrbf {

namespace {

std::vector<std::vector<double>> parse_numeric_rows(const std::string& text,
                                                    const std::string& what) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    std::istringstream toks(line);
    std::string tok;
    std::vector<double> row;
    int col = 0;
    while (toks >> tok) {
      ++col;
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size())
        throw ValidationError(what + ": non-numeric token '" + tok + "' at line " +
                              std::to_string(lineno) + ", column " + std::to_string(col));
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

GradientScheme::GradientScheme(std::vector<double> bvals, Eigen::Matrix3Xd bvecs)
    : bvals_(std::move(bvals)), bvecs_(std::move(bvecs)) {
  validate_and_index();
}

void GradientScheme::validate_and_index() {
  if (bvals_.empty()) throw ValidationError("gradient scheme is empty");
  if (Eigen::Index(bvals_.size()) != bvecs_.cols())
    throw ValidationError("bvals/bvecs length mismatch: " + std::to_string(bvals_.size()) +
                          " vs " + std::to_string(bvecs_.cols()));
  b0_indices_.clear();
  for (std::size_t m = 0; m < bvals_.size(); ++m) {
    if (bvals_[m] < 0)
      throw ValidationError("negative b-value at frame " + std::to_string(m));
    double norm = bvecs_.col(m).norm();
    if (bvals_[m] == 0.0) {
      b0_indices_.push_back(m);
      continue;
    }
    if (norm == 0.0)
      throw ValidationError("zero direction vector with nonzero b at frame " +
                            std::to_string(m));
    if (std::abs(norm - 1.0) > 1e-3)
      throw ValidationError("direction at frame " + std::to_string(m) +
                            " is not unit-norm (|p| = " + std::to_string(norm) + ")");
    // Skip the division when already unit to keep reload idempotent bit-for-bit.
    if (std::abs(norm - 1.0) > 1e-12) bvecs_.col(m) /= norm;
  }
}

std::vector<std::size_t> GradientScheme::dwi_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < size(); ++m)
    if (!is_b0(m)) out.push_back(m);
  return out;
}

std::vector<double> GradientScheme::shells() const {
  std::set<double> s;
  for (double b : bvals_)
    if (b > 0) s.insert(b);
  return {s.begin(), s.end()};
}

double GradientScheme::max_b() const {
  return *std::max_element(bvals_.begin(), bvals_.end());
}

GradientScheme GradientScheme::subset(const std::vector<std::size_t>& indices) const {
  std::vector<double> b;
  Eigen::Matrix3Xd p(3, indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size())
      throw ValidationError("subset index " + std::to_string(indices[i]) + " out of range");
    b.push_back(bvals_[indices[i]]);
    p.col(i) = bvecs_.col(indices[i]);
  }
  return GradientScheme(std::move(b), std::move(p));
}

std::uint64_t GradientScheme::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](double v) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t m = 0; m < size(); ++m) {
    feed(bvals_[m]);
    feed(bvecs_(0, m));
    feed(bvecs_(1, m));
    feed(bvecs_(2, m));
  }
  return h;
}

GradientScheme GradientScheme::parse(const std::string& bvals_text,
                                     const std::string& bvecs_text) {
  auto brows = parse_numeric_rows(bvals_text, "bvals");
  std::vector<double> bvals;
  for (auto& r : brows)
    bvals.insert(bvals.end(), r.begin(), r.end()); // one row, or one value per line
  if (bvals.empty()) throw ValidationError("bvals: no values found");

  auto vrows = parse_numeric_rows(bvecs_text, "bvecs");
  if (vrows.size() != 3)
    throw ValidationError("bvecs: expected 3 rows, got " + std::to_string(vrows.size()));
  if (vrows[0].size() != vrows[1].size() || vrows[0].size() != vrows[2].size())
    throw ValidationError("bvecs: rows have unequal lengths");
  if (vrows[0].size() != bvals.size())
    throw ValidationError("bvals/bvecs length mismatch: " + std::to_string(bvals.size()) +
                          " vs " + std::to_string(vrows[0].size()));
  Eigen::Matrix3Xd bvecs(3, bvals.size());
  for (std::size_t m = 0; m < bvals.size(); ++m)
    bvecs.col(m) = Eigen::Vector3d(vrows[0][m], vrows[1][m], vrows[2][m]);
  return GradientScheme(std::move(bvals), std::move(bvecs));
}

GradientScheme GradientScheme::load(const std::string& bvals_path,
                                    const std::string& bvecs_path) {
  return parse(read_file(bvals_path), read_file(bvecs_path));
}

void GradientScheme::save(const std::string& bvals_path, const std::string& bvecs_path) const {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ofstream bout(bvals_path, std::ios::binary);
  if (!bout) throw IOError("cannot write " + bvals_path);
  for (std::size_t m = 0; m < size(); ++m) bout << (m ? " " : "") << fmt(bvals_[m]);
  bout << "\n";
  std::ofstream vout(bvecs_path, std::ios::binary);
  if (!vout) throw IOError("cannot write " + bvecs_path);
  for (int r = 0; r < 3; ++r) {
    for (std::size_t m = 0; m < size(); ++m) vout << (m ? " " : "") << fmt(bvecs_(r, m));
    vout << "\n";
  }
}

} // namespace polyrbf
