#include <doctest.h>

#include <cmath>
#include <vector>

#include "polyrbf/errors.hpp"
#include "polyrbf/stats.hpp"

using namespace polyrbf;

namespace {

double t_pdf(double x, double df) {
  const double c = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) -
                   0.5 * std::log(df * std::acos(-1.0));
  return std::exp(c - 0.5 * (df + 1) * std::log1p(x * x / df));
}

// Adaptive Simpson integration of the t density.
double simpson(double a, double b, double fa, double fm, double fb, double df, double tol,
               int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = t_pdf(lm, df), frm = t_pdf(rm, df);
  const double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15 * tol)
    return left + right + (left + right - whole) / 15;
  return simpson(a, m, fa, flm, fm, df, tol / 2, depth - 1) +
         simpson(m, b, fm, frm, fb, df, tol / 2, depth - 1);
}

double t_cdf_oracle(double t, double df) {
  if (t < 0) return 1.0 - t_cdf_oracle(-t, df);
  const double m = 0.5 * t;
  return 0.5 + simpson(0, t, t_pdf(0, df), t_pdf(m, df), t_pdf(t, df), df, 1e-14, 40);
}

} // namespace

TEST_CASE("mse_log pools squared log differences") {
  Eigen::VectorXd a(3), b(3);
  a << 1.0, std::exp(1.0), 4.0;
  b << 1.0, 1.0, 4.0;
  CHECK(mse_log(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Eigen::VectorXd bad(3);
  bad << 1.0, -1.0, 2.0;
  CHECK_THROWS_AS(mse_log(a, bad), ValidationError);
  Eigen::VectorXd shorter(2);
  shorter << 1.0, 2.0;
  CHECK_THROWS_AS(mse_log(a, shorter), ValidationError);
}

TEST_CASE("student t cdf matches numerical integration") {
  for (double df : {1.0, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0})
    for (double t : {-4.0, -1.5, -0.3, 0.0, 0.7, 2.0, 5.0}) {
      CHECK(std::abs(student_t_cdf(t, df) - t_cdf_oracle(t, df)) < 1e-10);
    }
  // Symmetry and midpoint.
  CHECK(student_t_cdf(0.0, 7) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(student_t_cdf(2.5, 7) + student_t_cdf(-2.5, 7) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("paired t test closed-form fixture") {
  Eigen::VectorXd a(3), b(3);
  a << 1, 2, 3;
  b << 0, 0, 0;
  const TTestResult r = paired_t_test(a, b);
  CHECK(r.t == doctest::Approx(3.4641016151377544).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.07417990022744853).epsilon(1e-10));
  CHECK(!r.degenerate);

  // No effect: t = 0, p = 1.
  const TTestResult zero = paired_t_test(b, b);
  CHECK(zero.t == 0.0);
  CHECK(zero.p == 1.0);

  // Constant nonzero difference: zero spread is degenerate, p -> 0.
  Eigen::VectorXd c(3);
  c << 1, 1, 1;
  const TTestResult deg = paired_t_test(c, b);
  CHECK(deg.degenerate);
  CHECK(deg.p == 0.0);

  Eigen::VectorXd one(1);
  one << 1;
  CHECK_THROWS_AS(paired_t_test(one, one), ValidationError);
}

TEST_CASE("-log p threshold counts") {
  // -ln p values: {1, 4, 6, 11, 16}
  std::vector<double> p{std::exp(-1.0), std::exp(-4.0), std::exp(-6.0), std::exp(-11.0),
                        std::exp(-16.0)};
  const auto counts = neglogp_threshold_counts(p, {3, 5, 10, 15});
  CHECK(counts == std::vector<std::int64_t>{4, 3, 2, 1});
}

TEST_CASE("icc fixture and edge cases") {
  const IccResult r = icc({{0, 2}, {10, 12}});
  CHECK(r.value == doctest::Approx(0.9423076923076923).epsilon(1e-10));
  CHECK(!r.clipped);
  CHECK(!r.undefined);

  // All measurements identical: zero total variance, undefined.
  const IccResult flat = icc({{1, 1}, {1, 1}});
  CHECK(flat.undefined);

  // Within-subject spread dominating between-subject spread clips to 0.
  const IccResult noisy = icc({{0, 10}, {1, 9}});
  CHECK(noisy.value == 0.0);
  CHECK(noisy.clipped);

  CHECK_THROWS_AS(icc({{1, 2}}), ValidationError);
  CHECK_THROWS_AS(icc({{1}, {2}}), ValidationError);
}

TEST_CASE("icc difference map flags improvement per voxel and region") {
  // 4 voxels, 2 subjects x 2 scans; harmonized has smaller within-subject
  // spread on voxels 0-2; voxel 3 is masked out.
  const int nv = 4;
  auto scan = [&](double s0a, double s0b) {
    Eigen::VectorXd v(nv);
    for (int i = 0; i < nv; ++i) v(i) = (i < 2 ? s0a : s0b) + 0.01 * i;
    return v;
  };
  std::vector<int> subject_of{0, 0, 1, 1};
  std::vector<Eigen::VectorXd> original{scan(1.0, 5.0), scan(1.8, 5.8), scan(3.0, 7.0),
                                        scan(3.8, 7.8)};
  std::vector<Eigen::VectorXd> harmonized{scan(1.0, 5.0), scan(1.1, 5.1), scan(3.0, 7.0),
                                          scan(3.1, 7.1)};
  std::vector<std::uint8_t> mask{1, 1, 1, 0};
  std::vector<std::string> regions{"a", "a", "b", "ignored"};

  const IccDifferenceMap m =
      icc_difference_map(original, harmonized, subject_of, mask, &regions);
  CHECK(m.improved_fraction == doctest::Approx(1.0));
  CHECK(!m.all_ties);
  for (int v = 0; v < 3; ++v) {
    CHECK(m.harmonized_icc(v) > m.original_icc(v));
    CHECK(m.diff(v) > 0.0);
  }
  CHECK(std::isnan(m.diff(3)));
  REQUIRE(m.per_region.count("a") == 1);
  REQUIRE(m.per_region.count("b") == 1);
  CHECK(m.per_region.at("a") == doctest::Approx(1.0));
  CHECK(m.per_region.count("ignored") == 0);

  CHECK_THROWS_AS(icc_difference_map(original, harmonized, {0, 0, 1}, mask, nullptr),
                  ValidationError);
}

TEST_CASE("type-7 quantiles") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto q = quantiles(v, {0.0, 0.25, 0.5, 1.0});
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == doctest::Approx(1.75));
  CHECK(q[2] == doctest::Approx(2.5));
  CHECK(q[3] == doctest::Approx(4.0));
  CHECK_THROWS_AS(quantiles({}, {0.5}), ValidationError);
  CHECK_THROWS_AS(quantiles(v, {1.5}), ValidationError);
}
