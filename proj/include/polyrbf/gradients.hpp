#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace polyrbf {

// Acquisition protocol: one (b, p) pair per frame. Directions are unit-norm
// for b > 0; a zero vector is only legal on b = 0 frames.
class GradientScheme {
public:
  GradientScheme() = default;
  GradientScheme(std::vector<double> bvals, Eigen::Matrix3Xd bvecs);

  std::size_t size() const { return bvals_.size(); }
  double b(std::size_t m) const { return bvals_[m]; }
  Eigen::Vector3d dir(std::size_t m) const { return bvecs_.col(m); }
  const std::vector<double>& bvals() const { return bvals_; }
  const Eigen::Matrix3Xd& bvecs() const { return bvecs_; }

  bool is_b0(std::size_t m) const { return bvals_[m] == 0.0; }
  const std::vector<std::size_t>& b0_indices() const { return b0_indices_; }
  std::vector<std::size_t> dwi_indices() const;
  std::vector<double> shells() const; // distinct b > 0, ascending
  double max_b() const;

  GradientScheme subset(const std::vector<std::size_t>& indices) const;
  std::uint64_t fingerprint() const;

  static GradientScheme parse(const std::string& bvals_text, const std::string& bvecs_text);
  static GradientScheme load(const std::string& bvals_path, const std::string& bvecs_path);
  void save(const std::string& bvals_path, const std::string& bvecs_path) const;

private:
  void validate_and_index();

  std::vector<double> bvals_;
  Eigen::Matrix3Xd bvecs_;
  std::vector<std::size_t> b0_indices_;
};

} // namespace polyrbf
