#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "chainstation/factors.hpp"
#include "chainstation/graph.hpp"

using namespace chainstation;

namespace {

const Key kX('x', 0);
const Key kY('y', 0);

Eigen::VectorXd vec1(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

}  // namespace

TEST_CASE("key ordering and naming") {
  CHECK(Key('a', 0) < Key('b', 0));
  CHECK(Key('a', 1, 2).toString() == "a1@2");
  CHECK(Key('w', 0).toString() == "w0");
}

TEST_CASE("total error definitions") {
  FactorGraph empty;
  Values none;
  CHECK(empty.totalError(none) == 0.0);

  // single residual [3] with sigma 1 -> 9
  FactorGraph g;
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kX}, NoiseModel::isotropic(1, 1.0), "toy",
      [](const Values&) { return vec1(3.0); }));
  Values v;
  v.insert(kX, vec1(0.0));
  CHECK(g.totalError(v) == doctest::Approx(9.0));
}

TEST_CASE("total error invariant under factor permutation") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  Values v;
  v.insert(kX, vec1(n(rng)));
  v.insert(kY, vec1(n(rng)));

  std::vector<std::shared_ptr<Factor>> factors;
  for (int i = 0; i < 10; ++i) {
    const double target = n(rng);
    const Key key = (i % 2 == 0) ? kX : kY;
    factors.push_back(std::make_shared<VectorPriorFactor>(
        key, vec1(target), NoiseModel::isotropic(1, 0.5 + i * 0.1)));
  }
  FactorGraph a;
  FactorGraph b;
  for (const auto& f : factors) a.add(f);
  for (auto it = factors.rbegin(); it != factors.rend(); ++it) b.add(*it);
  CHECK(a.totalError(v) == doctest::Approx(b.totalError(v)).epsilon(1e-12));
}

TEST_CASE("hard-constraint whitening is weight * residual") {
  FactorGraph g;
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kX}, NoiseModel::hard(1, 100.0), "hard",
      [](const Values&) { return vec1(0.25); }));
  Values v;
  v.insert(kX, vec1(0.0));
  CHECK(g.totalError(v) == doctest::Approx(625.0));  // (100 * 0.25)^2
}

TEST_CASE("linearize: prior at mu has zero residual and whitened identity") {
  const double sigma = 0.5;
  VectorPriorFactor f(kX, vec1(2.0), NoiseModel::isotropic(1, sigma));
  Values v;
  v.insert(kX, vec1(2.0));
  const Linearization lin = linearizeFactor(f, v);
  CHECK(lin.residual.norm() == doctest::Approx(0.0));
  CHECK(lin.jacobians[0](0, 0) == doctest::Approx(1.0 / sigma));
}

TEST_CASE("linearize: non-finite residual raises a descriptive error") {
  FunctorFactor f({kX}, NoiseModel::isotropic(1, 1.0), "explodes",
                  [](const Values&) {
                    return vec1(std::numeric_limits<double>::quiet_NaN());
                  });
  Values v;
  v.insert(kX, vec1(0.0));
  CHECK_THROWS_WITH_AS(linearizeFactor(f, v),
                       doctest::Contains("explodes"), LinearizationError);
}

TEST_CASE("single prior solved exactly in a couple of iterations") {
  FactorGraph g;
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(3.5),
                                            NoiseModel::isotropic(1, 0.2)));
  Values init;
  init.insert(kX, vec1(-10.0));
  const auto [solution, report] = optimizeLm(g, init);
  CHECK(std::abs(solution.atVector(kX)(0) - 3.5) < 1e-10);
  CHECK(report.converged);
  CHECK(report.iterations <= 3);
  CHECK(report.finalError < 1e-18);
}

TEST_CASE("two priors give the information-weighted mean") {
  const double a = 1.0, sa = 0.1;
  const double b = 2.0, sb = 0.3;
  FactorGraph g;
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(a),
                                            NoiseModel::isotropic(1, sa)));
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(b),
                                            NoiseModel::isotropic(1, sb)));
  Values init;
  init.insert(kX, vec1(0.0));
  const auto [solution, report] = optimizeLm(g, init);
  const double expected =
      (a / (sa * sa) + b / (sb * sb)) / (1.0 / (sa * sa) + 1.0 / (sb * sb));
  CHECK(solution.atVector(kX)(0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("linear problem matches the normal-equations closed form") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);

  Eigen::MatrixXd a1(2, 2), a2(3, 3), c(4, 5);
  Eigen::VectorXd b1(2), b2(3), d(4);
  for (int r = 0; r < 2; ++r) {
    for (int cc = 0; cc < 2; ++cc) a1(r, cc) = n(rng);
    b1(r) = n(rng);
  }
  a1 += 2.0 * Eigen::MatrixXd::Identity(2, 2);
  for (int r = 0; r < 3; ++r) {
    for (int cc = 0; cc < 3; ++cc) a2(r, cc) = n(rng);
    b2(r) = n(rng);
  }
  a2 += 2.0 * Eigen::MatrixXd::Identity(3, 3);
  for (int r = 0; r < 4; ++r) {
    for (int cc = 0; cc < 5; ++cc) c(r, cc) = n(rng);
    d(r) = n(rng);
  }

  FactorGraph g;
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kX}, NoiseModel::isotropic(2, 1.0), "lin1",
      [&](const Values& v) {
        return Eigen::VectorXd(a1 * v.atVector(kX) - b1);
      }));
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kY}, NoiseModel::isotropic(3, 0.7), "lin2",
      [&](const Values& v) {
        return Eigen::VectorXd(a2 * v.atVector(kY) - b2);
      }));
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kX, kY}, NoiseModel::isotropic(4, 1.3), "lin3",
      [&](const Values& v) {
        Eigen::VectorXd xy(5);
        xy << v.atVector(kX), v.atVector(kY);
        return Eigen::VectorXd(c * xy - d);
      }));

  Values init;
  init.insert(kX, Eigen::VectorXd(Eigen::VectorXd::Zero(2)));
  init.insert(kY, Eigen::VectorXd(Eigen::VectorXd::Zero(3)));
  const auto [solution, report] = optimizeLm(g, init);

  // Independent closed form: stack whitened J and r, solve J^T J x = J^T r.
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(9, 5);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(9);
  j.block(0, 0, 2, 2) = a1;
  r.segment(0, 2) = b1;
  j.block(2, 2, 3, 3) = a2 / 0.7;
  r.segment(2, 3) = b2 / 0.7;
  j.block(5, 0, 4, 5) = c / 1.3;
  r.segment(5, 4) = d / 1.3;
  const Eigen::VectorXd oracle =
      (j.transpose() * j).ldlt().solve(j.transpose() * r);

  Eigen::VectorXd got(5);
  got << solution.atVector(kX), solution.atVector(kY);
  CHECK((got - oracle).norm() < 1e-10);
}

TEST_CASE("solution invariant under factor order and common sigma rescaling") {
  auto makeGraph = [](bool reversed, double scale) {
    std::vector<std::shared_ptr<Factor>> fs;
    fs.push_back(std::make_shared<VectorPriorFactor>(
        kX, vec1(2.0), NoiseModel::isotropic(1, 0.1 * scale)));
    fs.push_back(std::make_shared<VectorPriorFactor>(
        kX, vec1(5.0), NoiseModel::isotropic(1, 0.4 * scale)));
    fs.push_back(std::make_shared<FunctorFactor>(
        std::vector<Key>{kX}, NoiseModel::isotropic(1, 0.2 * scale), "nl",
        [](const Values& v) {
          const double x = v.atVector(kX)(0);
          return vec1(std::sin(0.3 * x) - 0.4);
        }));
    FactorGraph g;
    if (reversed) {
      for (auto it = fs.rbegin(); it != fs.rend(); ++it) g.add(*it);
    } else {
      for (const auto& f : fs) g.add(f);
    }
    return g;
  };

  Values init;
  init.insert(kX, vec1(0.0));
  const auto [s1, r1] = optimizeLm(makeGraph(false, 1.0), init);
  const auto [s2, r2] = optimizeLm(makeGraph(true, 1.0), init);
  const auto [s3, r3] = optimizeLm(makeGraph(false, 7.5), init);
  CHECK(std::abs(s1.atVector(kX)(0) - s2.atVector(kX)(0)) < 1e-9);
  CHECK(std::abs(s1.atVector(kX)(0) - s3.atVector(kX)(0)) < 1e-7);
}

TEST_CASE("accepted steps never increase the total error") {
  FactorGraph g;
  // a mildly nasty 1-D nonlinear least squares target
  g.add(std::make_shared<FunctorFactor>(
      std::vector<Key>{kX}, NoiseModel::isotropic(2, 1.0), "bumpy",
      [](const Values& v) {
        const double x = v.atVector(kX)(0);
        Eigen::VectorXd r(2);
        r << std::sin(3.0 * x) + 0.2 * x * x - 1.0, 0.3 * (x - 2.0);
        return r;
      }));
  Values init;
  init.insert(kX, vec1(-4.0));
  const auto [solution, report] = optimizeLm(g, init);
  REQUIRE(report.errorHistory.size() >= 2);
  for (std::size_t i = 1; i < report.errorHistory.size(); ++i) {
    CHECK(report.errorHistory[i] <= report.errorHistory[i - 1]);
  }
  CHECK(report.finalError <= report.initialError);
}

TEST_CASE("missing key in initial values is an argument error") {
  FactorGraph g;
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(0.0),
                                            NoiseModel::isotropic(1, 1.0)));
  Values empty;
  CHECK_THROWS_AS(optimizeLm(g, empty), ArgumentError);
}

TEST_CASE("lambda blow-up raises a non-convergence error with diagnostics") {
  // Finite residual only at the initial point; every candidate step is
  // rejected, so lambda escalates past its ceiling.
  class NowhereFactor : public Factor {
   public:
    NowhereFactor()
        : Factor({kX}, NoiseModel::isotropic(1, 1.0), "nowhere") {}
    Eigen::VectorXd evaluate(const Values& v) const override {
      const double x = v.atVector(kX)(0);
      Eigen::VectorXd r(1);
      r << (x == 0.5 ? 1.0 : std::numeric_limits<double>::quiet_NaN());
      return r;
    }
    std::optional<Eigen::MatrixXd> analyticJacobian(
        std::size_t, const Values&) const override {
      return Eigen::MatrixXd::Identity(1, 1);
    }
  };
  FactorGraph g;
  g.add(std::make_shared<NowhereFactor>());
  Values init;
  init.insert(kX, vec1(0.5));
  SolverSettings settings;
  settings.lambdaMax = 1e4;
  CHECK_THROWS_WITH_AS(optimizeLm(g, init, settings),
                       doctest::Contains("non-convergence"), SolveError);
}

TEST_CASE("hard-constraint violation is reported as a warning") {
  FactorGraph g;
  // two incompatible hard constraints cannot both be satisfied
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(0.0),
                                            NoiseModel::hard(1, 1e6), "h1"));
  g.add(std::make_shared<VectorPriorFactor>(kX, vec1(1.0),
                                            NoiseModel::hard(1, 1e6), "h2"));
  Values init;
  init.insert(kX, vec1(0.3));
  const auto [solution, report] = optimizeLm(g, init);
  CHECK(!report.warnings.empty());
}

TEST_CASE("noise model covariance whitening matches diagonal equivalent") {
  Eigen::MatrixXd cov = Eigen::Vector2d(0.04, 0.25).asDiagonal();
  const NoiseModel full = NoiseModel::covariance(cov);
  const NoiseModel diag = NoiseModel::sigmas(Eigen::Vector2d(0.2, 0.5));
  const Eigen::VectorXd r = Eigen::Vector2d(1.0, -2.0);
  CHECK((full.whiten(r) - diag.whiten(r)).norm() < 1e-12);
  CHECK_THROWS_AS(NoiseModel::sigmas(Eigen::Vector2d(0.0, 1.0)), ArgumentError);
  CHECK_THROWS_AS(
      NoiseModel::covariance(Eigen::MatrixXd::Zero(2, 3)), ArgumentError);
}

TEST_CASE("values type checks") {
  Values v;
  v.insert(kX, vec1(1.0));
  CHECK_THROWS_AS(v.atPose(kX), ArgumentError);
  CHECK_THROWS_AS(v.at(Key('z', 9)), ArgumentError);
  CHECK_THROWS_AS(v.insert(kX, vec1(2.0)), ArgumentError);
  CHECK_THROWS_AS(v.atVector3(kX), ArgumentError);
}
