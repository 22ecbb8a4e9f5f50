#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "chainstation/robot.hpp"

using namespace chainstation;

namespace {

Eigen::Matrix4d toMat(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = p.rotation.matrix();
  m.block<3, 1>(0, 3) = p.translation;
  return m;
}

Eigen::Matrix4d axisRot4(Axis axis, double angle) {
  return toMat(Pose(axisRotation(axis, angle), Eigen::Vector3d::Zero()));
}

std::mt19937_64 rngFor(const char* name) {
  std::seed_seq seq(name, name + std::strlen(name));
  return std::mt19937_64(seq);
}

Pose randomPose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Vector3d axis =
      Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  std::uniform_real_distribution<double> a(0.0, 2.5);
  return Pose(expMap(axis * a(rng)), Eigen::Vector3d(n(rng), n(rng), n(rng)));
}

}  // namespace

TEST_CASE("arm forward kinematics against a 4x4 matrix-chain oracle") {
  const RobotModel model = defaultRobotModel();
  const std::vector<Pose> calib = model.nominalArmTransforms();
  auto rng = rngFor("fk-oracle");
  std::uniform_real_distribution<double> u(-2.5, 2.5);

  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd q(3);
    q << u(rng), u(rng), u(rng);

    Eigen::Matrix4d oracle = Eigen::Matrix4d::Identity();
    for (std::size_t i = 0; i < model.arm.size(); ++i) {
      oracle = oracle * toMat(calib[i]) *
               axisRot4(model.arm[i].axis, q(static_cast<int>(i)));
    }
    const Pose fk = armForwardKinematics(model, q, calib);
    CHECK((toMat(fk) - oracle).cwiseAbs().maxCoeff() < 1e-12);

    const Eigen::Vector4d refl =
        oracle * Eigen::Vector4d(model.reflectorOffset.x(),
                                 model.reflectorOffset.y(),
                                 model.reflectorOffset.z(), 1.0);
    CHECK((armReflectorPosition(model, q, calib) - refl.head<3>()).norm() <
          1e-12);
  }
}

TEST_CASE("arm forward kinematics simple cases") {
  const RobotModel model = defaultRobotModel();
  const std::vector<Pose> calib = model.nominalArmTransforms();

  // all q = 0: plain product of the nominal offsets
  Pose expected;
  for (const auto& j : model.arm) expected = expected * j.offset;
  const Pose fk0 =
      armForwardKinematics(model, Eigen::Vector3d::Zero(), calib);
  CHECK(fk0.isApprox(expected, 1e-14));

  // single-joint model: quarter turn about z rotates the tool position
  RobotModel single = model;
  single.arm = {{Pose(Rotation::identity(), Eigen::Vector3d::Zero()), Axis::Z}};
  single.reflectorOffset = Eigen::Vector3d(1.0, 0.0, 0.0);
  Eigen::VectorXd q1(1);
  q1 << M_PI / 2.0;
  const std::vector<Pose> calib1 = single.nominalArmTransforms();
  CHECK((armReflectorPosition(single, q1, calib1) - Eigen::Vector3d(0, 1, 0))
            .norm() < 1e-12);

  Eigen::VectorXd wrong(2);
  wrong << 0.0, 0.0;
  CHECK_THROWS_AS(armForwardKinematics(single, wrong, calib1), ArgumentError);
}

TEST_CASE("chainTransform is a fold-left product") {
  auto rng = rngFor("chain");
  const Pose tail = randomPose(rng);
  CHECK(chainTransform(std::vector<Pose>{}, tail).isApprox(tail, 1e-15));

  const std::array<Pose, 2> simple = {
      Pose(axisRotation(Axis::Z, M_PI / 2.0), Eigen::Vector3d::Zero()),
      Pose(Rotation::identity(), Eigen::Vector3d(1, 0, 0))};
  const Pose got = chainTransform(simple, Pose::identity());
  // rotate then translate: the translation lands on +y
  CHECK((got.translation - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);

  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Pose> chain;
    for (int i = 0; i < 4; ++i) chain.push_back(randomPose(rng));
    const Pose t = randomPose(rng);
    Pose oracle = chain[0];
    for (std::size_t i = 1; i < chain.size(); ++i) oracle = oracle * chain[i];
    oracle = oracle * t;
    CHECK(chainTransform(chain, t).isApprox(oracle, 1e-12));
  }
}

TEST_CASE("segment overlap law") {
  const RobotModel model = defaultRobotModel();
  CHECK(segmentOverlap(model, 0.0) == doctest::Approx(model.overlapAtZero));

  // clamp boundary
  const double atClamp =
      (model.overlapAtZero - model.overlapMin) / model.overlapSlope;
  CHECK(segmentOverlap(model, atClamp) == doctest::Approx(model.overlapMin));
  CHECK(segmentOverlap(model, std::min(atClamp + 0.05, model.extensionMax)) ==
        doctest::Approx(model.overlapMin));

  // mid-range: direct formula
  const double mid = 0.5 * atClamp;
  CHECK(segmentOverlap(model, mid) ==
        doctest::Approx(model.overlapAtZero - model.overlapSlope * mid));

  // monotone non-increasing and >= lmin over the range
  double prev = segmentOverlap(model, 0.0);
  for (double e = 0.0; e <= model.extensionMax; e += 0.01) {
    const double l = segmentOverlap(model, e);
    CHECK(l <= prev + 1e-15);
    CHECK(l >= model.overlapMin);
    prev = l;
  }

  CHECK_THROWS_AS(segmentOverlap(model, -0.01), ArgumentError);
  CHECK_THROWS_AS(segmentOverlap(model, model.extensionMax + 0.01),
                  ArgumentError);
}

namespace {

RobotModel masslessModel() {
  RobotModel m = defaultRobotModel();
  m.masses.seg1 = {0.0, Eigen::Vector3d::Zero()};
  m.masses.seg2 = {0.0, Eigen::Vector3d::Zero()};
  for (auto& l : m.masses.armLinks) l = {0.0, Eigen::Vector3d::Zero()};
  m.masses.payload = {0.0, Eigen::Vector3d::Zero()};
  return m;
}

}  // namespace

TEST_CASE("joint torques: zero masses give zero torque") {
  const RobotModel model = masslessModel();
  JointConfiguration cfg;
  cfg.extension = 0.3;
  cfg.armAngles = Eigen::Vector3d(0.5, -0.2, 0.8);
  const auto torques =
      jointTorques(model, cfg, model.nominalArmTransforms());
  CHECK(torques[0].tauX == doctest::Approx(0.0));
  CHECK(torques[0].tauY == doctest::Approx(0.0));
  CHECK(torques[1].tauX == doctest::Approx(0.0));
  CHECK(torques[1].tauY == doctest::Approx(0.0));
}

TEST_CASE("joint torques: single point mass by hand") {
  RobotModel model = masslessModel();
  model.arm = {{Pose(Rotation::identity(), Eigen::Vector3d::Zero()), Axis::Z}};
  model.masses.armLinks.clear();
  const double m = 7.0;
  const double d = 0.4;
  model.masses.payload = {m, Eigen::Vector3d(0.0, d, 0.0)};

  JointConfiguration cfg;
  cfg.extension = 0.2;
  cfg.armAngles = Eigen::VectorXd::Zero(1);
  const auto torques = jointTorques(model, cfg, model.nominalArmTransforms());

  // r x (m g) with r = (0, d, dz) and g = (0, 0, -9.807):
  // tau_x = -m * 9.807 * d, tau_y = 0 for both column joints.
  CHECK(torques[1].tauX == doctest::Approx(-m * kGravity * d));
  CHECK(torques[1].tauY == doctest::Approx(0.0));
  CHECK(torques[0].tauX == doctest::Approx(-m * kGravity * d));
  CHECK(torques[0].tauY == doctest::Approx(0.0));
}

TEST_CASE("joint torques match an independent summation oracle") {
  const RobotModel model = defaultRobotModel();
  const std::vector<Pose> calib = model.nominalArmTransforms();
  auto rng = rngFor("torque-oracle");
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> ue(0.0, model.extensionMax);

  for (int trial = 0; trial < 100; ++trial) {
    JointConfiguration cfg;
    cfg.extension = ue(rng);
    cfg.armAngles = Eigen::Vector3d(u(rng), u(rng), u(rng));

    // Independent oracle via raw 4x4 chains.
    const Eigen::Vector3d g(0, 0, -kGravity);
    const Eigen::Matrix4d tBase = toMat(model.nominalBaseCol);
    Eigen::Matrix4d tSeg1 = tBase;
    tSeg1(2, 3) += model.colSeg1Offset.z() + cfg.extension;
    tSeg1(0, 3) += model.colSeg1Offset.x();
    tSeg1(1, 3) += model.colSeg1Offset.y();
    Eigen::Matrix4d tSeg2 = tSeg1;
    tSeg2(2, 3) += model.seg1Seg2Offset.z() + cfg.extension;
    tSeg2(0, 3) += model.seg1Seg2Offset.x();
    tSeg2(1, 3) += model.seg1Seg2Offset.y();

    struct PM {
      Eigen::Vector3d pos;
      double kg;
    };
    std::vector<PM> all;
    auto apply = [](const Eigen::Matrix4d& t, const Eigen::Vector3d& p) {
      return Eigen::Vector3d((t * Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0))
                                 .head<3>());
    };
    all.push_back({apply(tSeg1, model.masses.seg1.com), model.masses.seg1.kg});
    all.push_back({apply(tSeg2, model.masses.seg2.com), model.masses.seg2.kg});
    Eigen::Matrix4d link = tSeg2;
    for (std::size_t i = 0; i < model.arm.size(); ++i) {
      link = link * toMat(calib[i]) *
             axisRot4(model.arm[i].axis, cfg.armAngles(static_cast<int>(i)));
      all.push_back({apply(link, model.masses.armLinks[i].com),
                     model.masses.armLinks[i].kg});
    }
    all.push_back(
        {apply(link, model.masses.payload.com), model.masses.payload.kg});

    auto torqueAt = [&](const Eigen::Vector3d& pivot, std::size_t firstMass) {
      Eigen::Vector3d tau = Eigen::Vector3d::Zero();
      for (std::size_t i = firstMass; i < all.size(); ++i) {
        tau += (all[i].pos - pivot).cross(all[i].kg * g);
      }
      return tau;
    };
    const Eigen::Vector3d tauLower = torqueAt(tSeg1.block<3, 1>(0, 3), 0);
    const Eigen::Vector3d tauUpper = torqueAt(tSeg2.block<3, 1>(0, 3), 1);

    const auto torques = jointTorques(model, cfg, calib);
    CHECK(torques[0].tauX == doctest::Approx(tauLower.x()).epsilon(1e-10));
    CHECK(torques[0].tauY == doctest::Approx(tauLower.y()).epsilon(1e-10));
    CHECK(torques[1].tauX == doctest::Approx(tauUpper.x()).epsilon(1e-10));
    CHECK(torques[1].tauY == doctest::Approx(tauUpper.y()).epsilon(1e-10));
  }
}

TEST_CASE("torques are linear in the masses and flip with mirrored payload") {
  RobotModel model = defaultRobotModel();
  JointConfiguration cfg;
  cfg.extension = 0.4;
  cfg.armAngles = Eigen::Vector3d(0.7, 0.4, -0.9);
  const std::vector<Pose> calib = model.nominalArmTransforms();
  const auto base = jointTorques(model, cfg, calib);

  RobotModel doubled = model;
  doubled.masses.seg1.kg *= 2.0;
  doubled.masses.seg2.kg *= 2.0;
  for (auto& l : doubled.masses.armLinks) l.kg *= 2.0;
  doubled.masses.payload.kg *= 2.0;
  const auto twice = jointTorques(doubled, cfg, calib);
  CHECK(twice[0].tauX == doctest::Approx(2.0 * base[0].tauX).epsilon(1e-12));
  CHECK(twice[1].tauY == doctest::Approx(2.0 * base[1].tauY).epsilon(1e-12));

  // mirrored payload about y changes the sign of its tau_x contribution
  RobotModel onlyPayload = masslessModel();
  onlyPayload.masses.payload = {10.0, Eigen::Vector3d(0.0, 0.25, 0.0)};
  RobotModel mirrored = onlyPayload;
  mirrored.masses.payload.com.y() *= -1.0;
  JointConfiguration straight;
  straight.extension = 0.2;
  straight.armAngles = Eigen::Vector3d::Zero();
  const auto tp = jointTorques(onlyPayload, straight, calib);
  const auto tm = jointTorques(mirrored, straight, calib);
  CHECK(tp[0].tauX == doctest::Approx(-tm[0].tauX).epsilon(1e-12));
}

TEST_CASE("reflector world position is equivariant under base motion") {
  const RobotModel model = defaultRobotModel();
  const std::vector<Pose> calib = model.nominalArmTransforms();
  auto rng = rngFor("equivariance");
  std::uniform_real_distribution<double> u(-1.5, 1.5);

  for (int trial = 0; trial < 50; ++trial) {
    const Pose world = randomPose(rng);
    const Pose star = randomPose(rng);
    JointConfiguration cfg;
    cfg.extension = 0.3;
    cfg.armAngles = Eigen::Vector3d(u(rng), u(rng), u(rng));
    const std::array<Pose, 3> chain = {model.nominalBaseCol,
                                       colSeg1Nominal(model, cfg.extension),
                                       seg1Seg2Nominal(model, cfg.extension)};
    const Eigen::Vector3d p =
        reflectorWorldPosition(world, chain, model, cfg.armAngles, calib);
    const Eigen::Vector3d q =
        reflectorWorldPosition(star * world, chain, model, cfg.armAngles, calib);
    CHECK((q - star * p).norm() < 1e-12);
  }
}

TEST_CASE("base contact torque includes every mass") {
  const RobotModel model = defaultRobotModel();
  JointConfiguration cfg;
  cfg.extension = 0.5;
  cfg.armAngles = Eigen::Vector3d(1.2, 0.5, -0.4);
  const auto tau = baseContactTorque(model, cfg, model.nominalArmTransforms());
  // swinging the arm to the other side must flip the sign of the x torque
  JointConfiguration mirroredCfg = cfg;
  mirroredCfg.armAngles(0) = -cfg.armAngles(0);
  const auto tau2 =
      baseContactTorque(model, mirroredCfg, model.nominalArmTransforms());
  CHECK(std::abs(tau.tauX) > 1.0);
  CHECK(tau.tauX * tau2.tauX < 0.0);
}
