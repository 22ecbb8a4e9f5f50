#pragma once

#include <Eigen/Core>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "chainstation/lie.hpp"

namespace chainstation {

class LinearizationError : public Error {
 public:
  using Error::Error;
};

class SolveError : public Error {
 public:
  using Error::Error;
};

/// Symbolic variable id: namespace tag + index + optional timestamp index.
struct Key {
  char sym = '?';
  std::uint32_t index = 0;
  std::int32_t time = -1;  // -1 for global (untimestamped) variables

  Key() = default;
  Key(char s, std::uint32_t i, std::int32_t t = -1) : sym(s), index(i), time(t) {}

  auto operator<=>(const Key&) const = default;
  std::string toString() const;
};

struct KeyHash {
  std::size_t operator()(const Key& k) const {
    std::size_t h = static_cast<std::size_t>(static_cast<unsigned char>(k.sym));
    h = h * 1000003u + k.index;
    h = h * 1000003u + static_cast<std::uint32_t>(k.time + 1);
    return h;
  }
};

/// A manifold value: Pose (tangent dim 6), Rotation (3) or vector (n).
class Value {
 public:
  Value() : data_(Eigen::VectorXd()) {}
  Value(const Pose& p) : data_(p) {}
  Value(const Rotation& r) : data_(r) {}
  Value(const Eigen::VectorXd& v) : data_(v) {}
  Value(const Eigen::Vector3d& v) : data_(Eigen::VectorXd(v)) {}

  int dim() const;
  Value retract(const Eigen::VectorXd& delta) const;

  bool isPose() const { return std::holds_alternative<Pose>(data_); }
  bool isRotation() const { return std::holds_alternative<Rotation>(data_); }
  bool isVector() const { return std::holds_alternative<Eigen::VectorXd>(data_); }

  const Pose& pose() const;
  const Rotation& rotation() const;
  const Eigen::VectorXd& vector() const;

 private:
  std::variant<Pose, Rotation, Eigen::VectorXd> data_;
};

/// Keyed assignment of variable values.
class Values {
 public:
  void insert(const Key& k, Value v);
  void update(const Key& k, Value v);
  bool has(const Key& k) const { return map_.count(k) > 0; }
  const Value& at(const Key& k) const;

  const Pose& atPose(const Key& k) const { return at(k).pose(); }
  const Eigen::VectorXd& atVector(const Key& k) const { return at(k).vector(); }
  Eigen::Vector3d atVector3(const Key& k) const;

  std::size_t size() const { return map_.size(); }
  std::vector<Key> keysSorted() const;

  Values extract(const std::vector<Key>& keys) const;

  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

 private:
  std::unordered_map<Key, Value, KeyHash> map_;
};

/// Residual weighting: diagonal sigmas, a full covariance, or a
/// hard constraint realized as a uniform penalty weight.
class NoiseModel {
 public:
  enum class Kind { Diagonal, Full, Hard };

  static NoiseModel sigmas(const Eigen::VectorXd& s);
  static NoiseModel isotropic(int dim, double sigma);
  static NoiseModel covariance(const Eigen::MatrixXd& cov);
  static NoiseModel hard(int dim, double weight);
  /// Hard constraint with per-component scale-aware sigmas.
  static NoiseModel hardSigmas(const Eigen::VectorXd& s);

  int dim() const { return dim_; }
  Kind kind() const { return kind_; }
  bool isHard() const { return kind_ == Kind::Hard; }

  Eigen::VectorXd whiten(const Eigen::VectorXd& r) const;
  Eigen::MatrixXd whitenJacobian(const Eigen::MatrixXd& j) const;

 private:
  NoiseModel() = default;
  Kind kind_ = Kind::Diagonal;
  int dim_ = 0;
  Eigen::VectorXd invSigmas_;    // Diagonal and Hard
  Eigen::MatrixXd sqrtInfo_;     // Full: L^-1 with cov = L L^T
};

/// A residual block over an ordered set of keys.
class Factor {
 public:
  Factor(std::vector<Key> keys, NoiseModel noise, std::string group)
      : keys_(std::move(keys)), noise_(std::move(noise)), group_(std::move(group)) {}
  virtual ~Factor() = default;

  /// Raw (unwhitened) residual.
  virtual Eigen::VectorXd evaluate(const Values& v) const = 0;

  /// Analytic Jacobian for keys_[keyIdx], if registered. Layout matches the
  /// value's tangent space (pose tangent is [omega; v]).
  virtual std::optional<Eigen::MatrixXd> analyticJacobian(
      std::size_t keyIdx, const Values& v) const {
    (void)keyIdx;
    (void)v;
    return std::nullopt;
  }

  const std::vector<Key>& keys() const { return keys_; }
  int dim() const { return noise_.dim(); }
  const NoiseModel& noise() const { return noise_; }
  const std::string& group() const { return group_; }

 private:
  std::vector<Key> keys_;
  NoiseModel noise_;
  std::string group_;
};

/// Factor defined by a plain callable; handy for tests and toy problems.
class FunctorFactor : public Factor {
 public:
  using Fn = std::function<Eigen::VectorXd(const Values&)>;
  FunctorFactor(std::vector<Key> keys, NoiseModel noise, std::string group, Fn fn)
      : Factor(std::move(keys), std::move(noise), std::move(group)), fn_(std::move(fn)) {}
  Eigen::VectorXd evaluate(const Values& v) const override { return fn_(v); }

 private:
  Fn fn_;
};

struct Linearization {
  std::vector<Eigen::MatrixXd> jacobians;  // whitened, one per key
  Eigen::VectorXd residual;                // whitened
};

/// Whitened Jacobian blocks (central differences with the given tangent step
/// unless the factor registers an analytic Jacobian) and whitened residual.
Linearization linearizeFactor(const Factor& f, const Values& v,
                              double fdStep = 1e-6);

class FactorGraph {
 public:
  void add(std::shared_ptr<Factor> f) { factors_.push_back(std::move(f)); }
  std::size_t size() const { return factors_.size(); }
  const Factor& at(std::size_t i) const { return *factors_[i]; }
  const std::vector<std::shared_ptr<Factor>>& factors() const { return factors_; }

  /// Sum of whitened squared residual norms.
  double totalError(const Values& v) const;
  std::map<std::string, double> errorByGroup(const Values& v) const;

 private:
  std::vector<std::shared_ptr<Factor>> factors_;
};

enum class LinearSolverKind { Auto, Dense, Sparse };

struct SolverSettings {
  int maxIterations = 100;
  double lambdaInit = 1e-8;
  double lambdaScaleUp = 10.0;
  double lambdaScaleDown = 0.25;
  double lambdaMax = 1e10;
  double relativeErrorTol = 1e-9;
  double stepNormTol = 1e-10;
  double fdStep = 1e-6;
  LinearSolverKind linearSolver = LinearSolverKind::Auto;
  int sparseThresholdDim = 400;
  bool verbose = false;
};

struct ConvergenceReport {
  bool converged = false;
  std::string status;  // relative-decrease | step-norm | max-iterations | stalled
  int iterations = 0;
  int acceptedSteps = 0;
  double initialError = 0.0;
  double finalError = 0.0;
  double lambdaFinal = 0.0;
  std::map<std::string, double> errorByGroup;
  std::vector<double> errorHistory;   // initial error, then each accepted step
  std::vector<std::string> warnings;  // e.g. hard-constraint violations
};

/// Levenberg-Marquardt with diagonal damping on the Gauss-Newton normal
/// equations. Accepted steps never increase the total error.
std::pair<Values, ConvergenceReport> optimizeLm(const FactorGraph& graph,
                                                const Values& init,
                                                const SolverSettings& settings = {});

}  // namespace chainstation
