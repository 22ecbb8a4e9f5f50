#include <doctest.h>

#include <Eigen/Geometry>
#include <random>

#include "chainstation/lie.hpp"

using namespace chainstation;

namespace {

std::mt19937_64 rngFor(const char* name) {
  std::seed_seq seq(name, name + std::strlen(name));
  return std::mt19937_64(seq);
}

Eigen::Vector3d randomUnit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Rotation randomRotation(std::mt19937_64& rng, double maxAngle = M_PI - 0.05) {
  std::uniform_real_distribution<double> u(0.0, maxAngle);
  return expMap(randomUnit(rng) * u(rng));
}

}  // namespace

TEST_CASE("expMap basics") {
  CHECK(expMap(Eigen::Vector3d::Zero()).isApprox(Rotation::identity(), 1e-15));

  // quarter turn about x maps (0,1,0) to (0,0,1)
  const Rotation r = expMap(Eigen::Vector3d(M_PI / 2.0, 0.0, 0.0));
  const Eigen::Vector3d mapped = r * Eigen::Vector3d(0, 1, 0);
  CHECK((mapped - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("exp/log round-trip over 1000 random tangents") {
  auto rng = rngFor("exp-log-roundtrip");
  std::uniform_real_distribution<double> angle(1e-12, M_PI - 0.01);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d omega = randomUnit(rng) * angle(rng);
    const Eigen::Vector3d back = logMap(expMap(omega));
    worst = std::max(worst, (back - omega).norm());
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("logMap basics and branches") {
  CHECK(logMap(Rotation::identity()).norm() == doctest::Approx(0.0));

  const Eigen::Vector3d omega(0.0, 0.3, 0.0);
  CHECK((logMap(expMap(omega)) - omega).norm() < 1e-14);

  LogBranch branch = LogBranch::Generic;
  logMap(expMap(Eigen::Vector3d(1e-9, 0, 0)), &branch);
  CHECK(branch == LogBranch::SmallAngle);
  logMap(expMap(Eigen::Vector3d(0.5, 0.2, 0)), &branch);
  CHECK(branch == LogBranch::Generic);
  logMap(expMap(Eigen::Vector3d(M_PI - 1e-9, 0, 0)), &branch);
  CHECK(branch == LogBranch::NearPi);
}

TEST_CASE("logMap near pi matches quaternion-based oracle") {
  auto rng = rngFor("log-near-pi");
  std::uniform_real_distribution<double> angle(M_PI - 1e-3, M_PI - 1e-10);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d axis = randomUnit(rng);
    const Rotation r = expMap(axis * angle(rng));
    const Eigen::Vector3d mine = logMap(r);

    const Eigen::AngleAxisd oracle(r.matrix());
    const Eigen::Vector3d expected = oracle.angle() * oracle.axis();
    const double err =
        std::min((mine - expected).norm(), (mine + expected).norm());
    CHECK(err < 1e-9);
  }
}

TEST_CASE("boxminus") {
  auto rng = rngFor("boxminus");
  const Rotation r = randomRotation(rng);
  CHECK(boxminus(r, r).norm() < 1e-14);

  const Eigen::Vector3d omega(0.1, 0.0, 0.0);
  CHECK((boxminus(Rotation::identity(), expMap(omega)) - omega).norm() < 1e-14);

  // antisymmetry under swap: log(R1^T R2) = -log(R2^T R1)
  for (int i = 0; i < 100; ++i) {
    const Rotation r1 = randomRotation(rng, 1.5);
    const Rotation r2 = randomRotation(rng, 1.5);
    CHECK((boxminus(r1, r2) + boxminus(r2, r1)).norm() < 1e-12);
  }

  // zero iff equal
  for (int i = 0; i < 100; ++i) {
    const Rotation r1 = randomRotation(rng, 1.5);
    const Rotation r2 = randomRotation(rng, 1.5);
    if (boxminus(r1, r2).norm() < 1e-12) {
      CHECK(r1.isApprox(r2, 1e-11));
    } else {
      CHECK_FALSE(r1.isApprox(r2, 1e-12));
    }
  }
}

TEST_CASE("axisRotation") {
  CHECK(axisRotation(Axis::X, 0.0).isApprox(Rotation::identity(), 1e-15));

  Eigen::Matrix3d expected;
  expected << -1, 0, 0, 0, 1, 0, 0, 0, -1;
  CHECK((axisRotation(Axis::Y, M_PI).matrix() - expected).cwiseAbs().maxCoeff() <
        1e-12);

  auto rng = rngFor("axis-composition");
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (Axis axis : {Axis::X, Axis::Y, Axis::Z}) {
    for (int i = 0; i < 50; ++i) {
      const double a = u(rng);
      const double b = u(rng);
      CHECK((axisRotation(axis, a) * axisRotation(axis, b))
                .isApprox(axisRotation(axis, a + b), 1e-12));
    }
  }
}

TEST_CASE("rpy round trip") {
  auto rng = rngFor("rpy");
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d rpy(u(rng), u(rng), u(rng));
    const Eigen::Vector3d back = rpyFromRotation(rotationFromRpy(rpy));
    CHECK((back - rpy).norm() < 1e-12);
  }
}

TEST_CASE("orthonormality preserved under long composition chains") {
  auto rng = rngFor("orthonormality");
  Rotation r = Rotation::identity();
  for (int i = 0; i < 10000; ++i) {
    r = r * randomRotation(rng);
  }
  CHECK(r.orthonormalityError() < 1e-9);
  CHECK(r.orthonormalized().orthonormalityError() < 1e-15);
}

TEST_CASE("pose composition and inverse") {
  auto rng = rngFor("pose");
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Pose a(randomRotation(rng), Eigen::Vector3d(n(rng), n(rng), n(rng)));
    const Pose b(randomRotation(rng), Eigen::Vector3d(n(rng), n(rng), n(rng)));
    const Eigen::Vector3d p(n(rng), n(rng), n(rng));
    CHECK(((a * b) * p - a * (b * p)).norm() < 1e-12);
    CHECK((a * a.inverse()).isApprox(Pose::identity(), 1e-12));
  }
}

TEST_CASE("kabschAlign exact cases") {
  auto rng = rngFor("kabsch");
  std::normal_distribution<double> n(0.0, 1.0);

  // identical point sets -> identity, zero RMS
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 5; ++i) pts.emplace_back(n(rng), n(rng), n(rng));
  const Pose id = kabschAlign(pts, pts);
  CHECK(id.isApprox(Pose::identity(), 1e-12));

  // recovers a random rigid transform on noise-free data
  for (int trial = 0; trial < 100; ++trial) {
    const Pose truth(randomRotation(rng),
                     Eigen::Vector3d(n(rng), n(rng), n(rng)) * 3.0);
    const int count = 3 + trial % 5;
    std::vector<Eigen::Vector3d> src;
    std::vector<Eigen::Vector3d> dst;
    for (int i = 0; i < count; ++i) {
      src.emplace_back(n(rng), n(rng), n(rng));
      dst.push_back(truth * src.back());
    }
    // skip the rare nearly-collinear draws; they are covered below
    Pose est;
    try {
      est = kabschAlign(src, dst);
    } catch (const DegenerateGeometryError&) {
      continue;
    }
    double rms = 0.0;
    for (int i = 0; i < count; ++i) {
      rms += (dst[static_cast<std::size_t>(i)] -
              est * src[static_cast<std::size_t>(i)])
                 .squaredNorm();
    }
    rms = std::sqrt(rms / count);
    CHECK(rms < 1e-10);
    CHECK(est.rotation.isApprox(truth.rotation, 1e-9));
    CHECK((est.translation - truth.translation).norm() < 1e-9);
    CHECK(est.rotation.matrix().determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("kabschAlign error cases") {
  std::vector<Eigen::Vector3d> collinear = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  CHECK_THROWS_AS(kabschAlign(collinear, collinear), DegenerateGeometryError);

  std::vector<Eigen::Vector3d> two = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(kabschAlign(two, two), DegenerateGeometryError);

  std::vector<Eigen::Vector3d> three = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  std::vector<Eigen::Vector3d> four = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  CHECK_THROWS_AS(kabschAlign(three, four), ArgumentError);
}
