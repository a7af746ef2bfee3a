#include <doctest.h>

#include <random>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "gapfill/baselines.hpp"
#include "gapfill/error.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/random.hpp"
#include "gapfill/spline.hpp"
#include "support.hpp"

using namespace gapfill;

TEST_CASE("tridiagonal solver against a dense solve") {
  const std::vector<double> lo{0, 1, 2, 1}, di{5, 6, 7, 5}, up{2, 1, 1, 0}, rhs{1, -2, 3, 4};
  const auto x = solve_tridiagonal<double>(lo, di, up, rhs);
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 4; ++i) {
    A(i, i) = di[i];
    if (i > 0) A(i, i - 1) = lo[i];
    if (i < 3) A(i, i + 1) = up[i];
  }
  const Eigen::Vector4d want = A.lu().solve(Eigen::Vector4d(rhs.data()));
  for (int i = 0; i < 4; ++i) CHECK(x[i] == doctest::Approx(want(i)).epsilon(1e-13));
}

TEST_CASE("natural spline through five knots matches scipy") {
  // scipy.interpolate.CubicSpline(bc_type="natural") on the same knots.
  const NaturalCubicSpline<double> s({0, 1, 2, 3, 4}, {0, 0.8, 0.9, 0.2, 0.1});
  CHECK(s(1.5) == doctest::Approx(0.9779017857142855).epsilon(1e-13));
  CHECK(s(3.5) == doctest::Approx(0.07299107142857145).epsilon(1e-13));
  CHECK(s(0.25) == doctest::Approx(0.22804129464285716).epsilon(1e-13));
  CHECK(s.curvature().front() == 0.0);
  CHECK(s.curvature().back() == 0.0);
  CHECK(s(-3.0) == 0.0);
  CHECK(s(9.0) == 0.1);
}

TEST_CASE("spline works in single precision") {
  const NaturalCubicSpline<float> s({0.f, 1.f, 2.f, 3.f}, {1.f, 2.f, 3.f, 4.f});
  CHECK(s(2.5f) == doctest::Approx(3.5f));
}

TEST_CASE("spline imputation reproduces affine streams") {
  Grid g(2, 40);
  for (Eigen::Index t = 0; t < 40; ++t) {
    g(0, t) = 0.01 * static_cast<double>(t);
    g(1, t) = 0.9 - 0.02 * static_cast<double>(t);
  }
  const auto complete = gapfill::testing::make_cohort({g});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    MaskSpec spec;
    spec.mode = BernoulliMask{0.3};
    spec.seed = seed;
    auto masked = apply_mask(complete, spec).masked;
    // Keep both endpoints so no clamping is involved.
    for (auto& s : masked.segments) {
      for (Eigen::Index d = 0; d < 2; ++d) {
        for (Eigen::Index t : {Eigen::Index{0}, Eigen::Index{39}}) {
          s.observed(d, t) = true;
          s.values(d, t) = g(d, t);
        }
      }
    }
    const auto filled = spline_impute(masked);
    CHECK((filled.segments[0].values - g).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("spline fallbacks for sparse streams") {
  Grid g = Grid::Zero(1, 6);
  auto s = gapfill::testing::make_series("a", g);
  s.observed.setConstant(false);
  CHECK((spline_impute(s).values.array() == 0.5).all());

  s.observed(0, 3) = true;
  s.values(0, 3) = 0.7;
  CHECK((spline_impute(s).values.array() == 0.7).all());

  s.observed(0, 1) = true;
  s.values(0, 1) = 0.1;  // two points: linear between, clamped outside
  const auto two = spline_impute(s).values;
  CHECK(two(0, 0) == 0.1);
  CHECK(two(0, 2) == doctest::Approx(0.4));
  CHECK(two(0, 5) == 0.7);
}

TEST_CASE("spline leaves observed entries alone") {
  const auto c = synthesize_cohort({3, 2, 20, 0.05, 1});
  MaskSpec spec;
  spec.mode = BernoulliMask{0.5};
  spec.seed = 2;
  const auto masked = apply_mask(c, spec).masked;
  const auto filled = spline_impute(masked);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& m = masked.segments[i];
    for (Eigen::Index k = 0; k < m.values.size(); ++k) {
      if (m.observed.data()[k]) CHECK(filled.segments[i].values.data()[k] == m.values.data()[k]);
    }
  }
}

TEST_CASE("cohort matrix layout and round trip") {
  Grid a(2, 3), b(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  b << 7, 8, 9, 10, 11, 12;
  auto c = gapfill::testing::make_cohort({a, b});
  auto cm = cohort_to_matrix(c);
  REQUIRE(cm.values.rows() == 2);
  REQUIRE(cm.values.cols() == 6);
  CHECK(cm.values(0, 2) == 3.0);   // (d0, t2)
  CHECK(cm.values(0, 3) == 4.0);   // (d1, t0)
  CHECK(cm.values(1, 5) == 12.0);
  CHECK((cm.mask.array() == 1.0).all());

  c.segments[1].observed(1, 1) = false;
  c.segments[1].values(1, 1) = 0.0;
  cm = cohort_to_matrix(c);
  CHECK(cm.mask(1, 4) == 0.0);
  CHECK(cm.values(1, 4) == 0.0);
  Eigen::MatrixXd filled = cm.values;
  filled(1, 4) = 42.0;
  const auto back = fill_from_matrix(c, filled);
  CHECK(back.segments[1].values(1, 1) == 42.0);
  CHECK(cohort_to_matrix(back).values == filled);
}

TEST_CASE("soft-impute restores a fully observed matrix exactly") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 5);
  const auto r = soft_impute(x, Eigen::MatrixXd::Ones(6, 5), SoftImputeConfig{});
  CHECK(r.completed == x);
}

TEST_CASE("soft-impute completes the rank-one example") {
  Eigen::MatrixXd x(2, 2), m(2, 2);
  x << 1, 2, 2, 0;
  m << 1, 1, 1, 0;
  SoftImputeConfig cfg;
  cfg.lambdas = {1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5};
  cfg.rank_cap = 1;
  cfg.holdout_fraction = 0.0;
  cfg.max_iters = 5000;
  cfg.tolerance = 1e-12;
  const auto r = soft_impute(x, m, cfg);
  CHECK(r.completed(1, 1) == doctest::Approx(4.0).epsilon(1e-3 / 4.0));
}

TEST_CASE("soft-impute collapses to zero when lambda exceeds every singular value") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 4);
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(5, 4);
  m(0, 0) = m(3, 2) = 0.0;
  SoftImputeConfig cfg;
  cfg.lambdas = {1000.0, 500.0};
  const auto r = soft_impute(x, m, cfg);
  CHECK(r.low_rank.isZero(0.0));
  CHECK(r.completed(0, 0) == 0.0);
  CHECK(r.completed(3, 2) == 0.0);
}

TEST_CASE("soft-impute objective never increases within a stage") {
  Rng rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd A(20, 3), B(3, 30), m(20, 30);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng) < 0.3 ? 0.0 : 1.0;
    SoftImputeConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const auto r = soft_impute(A * B, m, cfg);
    for (const auto* path : {&r.selection_path, &r.final_path}) {
      for (const auto& stage : *path) {
        for (std::size_t k = 1; k < stage.objective.size(); ++k) {
          CHECK(stage.objective[k] <= stage.objective[k - 1] * (1 + 1e-12) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("soft-impute respects the rank cap") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(12, 9);
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(12, 9);
  for (int i = 0; i < 12; ++i) m(i, (i * 5) % 9) = 0.0;
  for (Eigen::Index cap : {1, 2, 4}) {
    SoftImputeConfig cfg;
    cfg.rank_cap = cap;
    const auto r = soft_impute(x, m, cfg);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r.low_rank);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) rank += svd.singularValues()(i) > 1e-10;
    CHECK(rank <= cap);
  }
}

TEST_CASE("soft-impute input validation") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 3);
  CHECK_THROWS_AS(soft_impute(x, Eigen::MatrixXd::Zero(3, 3), {}), PreconditionError);
  CHECK_THROWS_AS(soft_impute(x, Eigen::MatrixXd::Ones(3, 2), {}), ShapeError);
  SoftImputeConfig cfg;
  cfg.lambdas = {0.1, 0.5};
  CHECK_THROWS_AS(soft_impute(x, Eigen::MatrixXd::Ones(3, 3), cfg), ConfigError);
  cfg.lambdas = {};
  cfg.tolerance = 0.0;
  CHECK_THROWS_AS(soft_impute(x, Eigen::MatrixXd::Ones(3, 3), cfg), ConfigError);
}

TEST_CASE("default lambda schedule spans sigma_max / 2 to sigma_max / 1000") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(8, 6);
  const auto l = default_lambda_schedule(x, Eigen::MatrixXd::Ones(8, 6));
  REQUIRE(l.size() == 10);
  const double smax = Eigen::JacobiSVD<Eigen::MatrixXd>(x).singularValues()(0);
  CHECK(l.front() == doctest::Approx(smax / 2));
  CHECK(l.back() == doctest::Approx(smax / 1000));
  for (std::size_t i = 1; i < l.size(); ++i) CHECK(l[i] < l[i - 1]);
}
