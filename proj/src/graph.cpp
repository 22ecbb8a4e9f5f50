#include "chainstation/graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace chainstation {

std::string Key::toString() const {
  std::ostringstream os;
  os << sym << index;
  if (time >= 0) os << '@' << time;
  return os.str();
}

int Value::dim() const {
  if (isPose()) return 6;
  if (isRotation()) return 3;
  return static_cast<int>(vector().size());
}

Value Value::retract(const Eigen::VectorXd& delta) const {
  if (isPose()) {
    return Value(pose().retract(Eigen::Matrix<double, 6, 1>(delta)));
  }
  if (isRotation()) {
    return Value(rotation() * expMap(Eigen::Vector3d(delta)));
  }
  return Value(Eigen::VectorXd(vector() + delta));
}

const Pose& Value::pose() const {
  if (!isPose()) throw ArgumentError("Value: not a Pose");
  return std::get<Pose>(data_);
}

const Rotation& Value::rotation() const {
  if (!isRotation()) throw ArgumentError("Value: not a Rotation");
  return std::get<Rotation>(data_);
}

const Eigen::VectorXd& Value::vector() const {
  if (!isVector()) throw ArgumentError("Value: not a vector");
  return std::get<Eigen::VectorXd>(data_);
}

void Values::insert(const Key& k, Value v) {
  if (!map_.emplace(k, std::move(v)).second) {
    throw ArgumentError("Values: duplicate key " + k.toString());
  }
}

void Values::update(const Key& k, Value v) {
  auto it = map_.find(k);
  if (it == map_.end()) {
    throw ArgumentError("Values: update of missing key " + k.toString());
  }
  it->second = std::move(v);
}

const Value& Values::at(const Key& k) const {
  auto it = map_.find(k);
  if (it == map_.end()) {
    throw ArgumentError("Values: missing key " + k.toString());
  }
  return it->second;
}

Eigen::Vector3d Values::atVector3(const Key& k) const {
  const Eigen::VectorXd& v = atVector(k);
  if (v.size() != 3) {
    throw ArgumentError("Values: key " + k.toString() + " is not a 3-vector");
  }
  return Eigen::Vector3d(v);
}

std::vector<Key> Values::keysSorted() const {
  std::vector<Key> keys;
  keys.reserve(map_.size());
  for (const auto& [k, v] : map_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

Values Values::extract(const std::vector<Key>& keys) const {
  Values out;
  for (const Key& k : keys) out.insert(k, at(k));
  return out;
}

NoiseModel NoiseModel::sigmas(const Eigen::VectorXd& s) {
  if ((s.array() <= 0.0).any()) {
    throw ArgumentError("NoiseModel: sigmas must be > 0");
  }
  NoiseModel m;
  m.kind_ = Kind::Diagonal;
  m.dim_ = static_cast<int>(s.size());
  m.invSigmas_ = s.cwiseInverse();
  return m;
}

NoiseModel NoiseModel::isotropic(int dim, double sigma) {
  return sigmas(Eigen::VectorXd::Constant(dim, sigma));
}

NoiseModel NoiseModel::covariance(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) {
    throw ArgumentError("NoiseModel: covariance must be square");
  }
  if (!cov.isApprox(cov.transpose(), 1e-12)) {
    throw ArgumentError("NoiseModel: covariance must be symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw ArgumentError("NoiseModel: covariance must be positive definite");
  }
  NoiseModel m;
  m.kind_ = Kind::Full;
  m.dim_ = static_cast<int>(cov.rows());
  m.sqrtInfo_ = Eigen::MatrixXd(llt.matrixL())
                    .triangularView<Eigen::Lower>()
                    .solve(Eigen::MatrixXd::Identity(cov.rows(), cov.rows()));
  return m;
}

NoiseModel NoiseModel::hard(int dim, double weight) {
  if (weight <= 0.0) throw ArgumentError("NoiseModel: hard weight must be > 0");
  return hardSigmas(Eigen::VectorXd::Constant(dim, 1.0 / weight));
}

NoiseModel NoiseModel::hardSigmas(const Eigen::VectorXd& s) {
  NoiseModel m = sigmas(s);
  m.kind_ = Kind::Hard;
  return m;
}

Eigen::VectorXd NoiseModel::whiten(const Eigen::VectorXd& r) const {
  if (r.size() != dim_) {
    throw ArgumentError("NoiseModel: residual dim " + std::to_string(r.size()) +
                        " does not match noise dim " + std::to_string(dim_));
  }
  if (kind_ == Kind::Full) return sqrtInfo_ * r;
  return invSigmas_.cwiseProduct(r);
}

Eigen::MatrixXd NoiseModel::whitenJacobian(const Eigen::MatrixXd& j) const {
  if (kind_ == Kind::Full) return sqrtInfo_ * j;
  return invSigmas_.asDiagonal() * j;
}

namespace {

std::string describeFactor(const Factor& f) {
  std::ostringstream os;
  os << f.group() << " factor over keys [";
  for (std::size_t i = 0; i < f.keys().size(); ++i) {
    if (i) os << ", ";
    os << f.keys()[i].toString();
  }
  os << "]";
  return os.str();
}

Eigen::VectorXd evaluateChecked(const Factor& f, const Values& v) {
  Eigen::VectorXd r = f.evaluate(v);
  if (r.size() != f.dim()) {
    throw LinearizationError("residual dim mismatch in " + describeFactor(f));
  }
  if (!r.allFinite()) {
    throw LinearizationError("non-finite residual in " + describeFactor(f));
  }
  return r;
}

}  // namespace

Linearization linearizeFactor(const Factor& f, const Values& v, double fdStep) {
  Linearization lin;
  const Eigen::VectorXd r0 = evaluateChecked(f, v);
  lin.jacobians.resize(f.keys().size());

  Values local = v.extract(f.keys());
  for (std::size_t ki = 0; ki < f.keys().size(); ++ki) {
    const Key& key = f.keys()[ki];
    if (auto ja = f.analyticJacobian(ki, v)) {
      lin.jacobians[ki] = f.noise().whitenJacobian(*ja);
      continue;
    }
    const Value orig = local.at(key);
    const int d = orig.dim();
    Eigen::MatrixXd j(f.dim(), d);
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(d);
    for (int c = 0; c < d; ++c) {
      delta(c) = fdStep;
      local.update(key, orig.retract(delta));
      const Eigen::VectorXd rPlus = evaluateChecked(f, local);
      delta(c) = -fdStep;
      local.update(key, orig.retract(delta));
      const Eigen::VectorXd rMinus = evaluateChecked(f, local);
      delta(c) = 0.0;
      j.col(c) = (rPlus - rMinus) / (2.0 * fdStep);
    }
    local.update(key, orig);
    lin.jacobians[ki] = f.noise().whitenJacobian(j);
  }
  lin.residual = f.noise().whiten(r0);
  return lin;
}

double FactorGraph::totalError(const Values& v) const {
  double e = 0.0;
  for (const auto& f : factors_) {
    e += f->noise().whiten(evaluateChecked(*f, v)).squaredNorm();
  }
  return e;
}

std::map<std::string, double> FactorGraph::errorByGroup(const Values& v) const {
  std::map<std::string, double> by;
  for (const auto& f : factors_) {
    by[f->group()] += f->noise().whiten(evaluateChecked(*f, v)).squaredNorm();
  }
  return by;
}

namespace {

struct Ordering {
  std::vector<Key> keys;
  std::unordered_map<Key, int, KeyHash> offset;
  std::unordered_map<Key, int, KeyHash> dim;
  int totalDim = 0;
};

Ordering buildOrdering(const FactorGraph& graph, const Values& values) {
  std::vector<Key> referenced;
  std::unordered_map<Key, bool, KeyHash> seen;
  for (const auto& f : graph.factors()) {
    for (const Key& k : f->keys()) {
      if (!values.has(k)) {
        throw ArgumentError("optimizeLm: factor references key " + k.toString() +
                            " missing from initial values");
      }
      if (!seen[k]) {
        seen[k] = true;
        referenced.push_back(k);
      }
    }
  }
  std::sort(referenced.begin(), referenced.end());
  Ordering ord;
  ord.keys = std::move(referenced);
  int off = 0;
  for (const Key& k : ord.keys) {
    const int d = values.at(k).dim();
    ord.offset[k] = off;
    ord.dim[k] = d;
    off += d;
  }
  ord.totalDim = off;
  return ord;
}

Values retractAll(const Values& values, const Ordering& ord,
                  const Eigen::VectorXd& delta) {
  Values out = values;
  for (const Key& k : ord.keys) {
    const int off = ord.offset.at(k);
    const int d = ord.dim.at(k);
    out.update(k, values.at(k).retract(delta.segment(off, d)));
  }
  return out;
}

struct NormalEquations {
  Eigen::MatrixXd hDense;
  Eigen::SparseMatrix<double> hSparse;
  Eigen::VectorXd g;  // -J^T r
  bool sparse = false;
};

NormalEquations assemble(const FactorGraph& graph, const Values& values,
                         const Ordering& ord, double fdStep, bool sparse) {
  NormalEquations ne;
  ne.sparse = sparse;
  ne.g = Eigen::VectorXd::Zero(ord.totalDim);
  std::vector<Eigen::Triplet<double>> triplets;
  if (sparse) {
    triplets.reserve(1 << 16);
  } else {
    ne.hDense = Eigen::MatrixXd::Zero(ord.totalDim, ord.totalDim);
  }
  for (const auto& f : graph.factors()) {
    const Linearization lin = linearizeFactor(*f, values, fdStep);
    const auto& keys = f->keys();
    for (std::size_t a = 0; a < keys.size(); ++a) {
      const int offA = ord.offset.at(keys[a]);
      ne.g.segment(offA, lin.jacobians[a].cols()) -=
          lin.jacobians[a].transpose() * lin.residual;
      for (std::size_t b = 0; b < keys.size(); ++b) {
        const int offB = ord.offset.at(keys[b]);
        const Eigen::MatrixXd hab =
            lin.jacobians[a].transpose() * lin.jacobians[b];
        if (sparse) {
          for (int r = 0; r < hab.rows(); ++r) {
            for (int c = 0; c < hab.cols(); ++c) {
              if (hab(r, c) != 0.0) {
                triplets.emplace_back(offA + r, offB + c, hab(r, c));
              }
            }
          }
        } else {
          ne.hDense.block(offA, offB, hab.rows(), hab.cols()) += hab;
        }
      }
    }
  }
  if (sparse) {
    ne.hSparse.resize(ord.totalDim, ord.totalDim);
    ne.hSparse.setFromTriplets(triplets.begin(), triplets.end());
  }
  return ne;
}

bool solveDamped(const NormalEquations& ne, double lambda,
                 const Eigen::VectorXd& dampDiag, Eigen::VectorXd& delta) {
  if (!ne.sparse) {
    Eigen::MatrixXd h = ne.hDense;
    h.diagonal() += lambda * dampDiag;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success) return false;
    delta = ldlt.solve(ne.g);
  } else {
    Eigen::SparseMatrix<double> h = ne.hSparse;
    for (int i = 0; i < h.rows(); ++i) {
      h.coeffRef(i, i) += lambda * dampDiag(i);
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(h);
    if (ldlt.info() != Eigen::Success) return false;
    delta = ldlt.solve(ne.g);
  }
  return delta.allFinite();
}

}  // namespace

std::pair<Values, ConvergenceReport> optimizeLm(const FactorGraph& graph,
                                                const Values& init,
                                                const SolverSettings& settings) {
  const Ordering ord = buildOrdering(graph, init);
  ConvergenceReport report;
  Values current = init;
  double error = graph.totalError(current);
  report.initialError = error;
  report.errorHistory.push_back(error);

  const bool sparse =
      settings.linearSolver == LinearSolverKind::Sparse ||
      (settings.linearSolver == LinearSolverKind::Auto &&
       ord.totalDim > settings.sparseThresholdDim);

  double lambda = settings.lambdaInit;
  bool done = ord.totalDim == 0;
  if (done) report.status = "empty-problem";

  while (!done && report.iterations < settings.maxIterations) {
    ++report.iterations;
    const NormalEquations ne =
        assemble(graph, current, ord, settings.fdStep, sparse);
    Eigen::VectorXd diag =
        sparse ? Eigen::VectorXd(ne.hSparse.diagonal()) : ne.hDense.diagonal();
    const double maxDiag = std::max(diag.maxCoeff(), 0.0);
    for (int i = 0; i < diag.size(); ++i) {
      diag(i) = std::max({diag(i), 1e-9 * maxDiag, 1e-12});
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::VectorXd delta;
      const bool ok = solveDamped(ne, lambda, diag, delta);
      if (ok) {
        const double stepNorm = delta.norm();
        Values candidate = retractAll(current, ord, delta);
        double newError;
        bool finite = true;
        try {
          newError = graph.totalError(candidate);
        } catch (const LinearizationError&) {
          finite = false;
          newError = error;
        }
        if (finite && newError < error) {
          const double relDecrease = (error - newError) / std::max(error, 1e-300);
          current = std::move(candidate);
          error = newError;
          report.errorHistory.push_back(error);
          ++report.acceptedSteps;
          accepted = true;
          lambda = std::max(lambda * settings.lambdaScaleDown, 1e-12);
          if (relDecrease < settings.relativeErrorTol) {
            report.converged = true;
            report.status = "relative-decrease";
            done = true;
          } else if (stepNorm < settings.stepNormTol) {
            report.converged = true;
            report.status = "step-norm";
            done = true;
          }
          break;
        }
        if (stepNorm < settings.stepNormTol) {
          // No downhill step of meaningful size exists; we are at a minimum.
          report.converged = true;
          report.status = "step-norm";
          done = true;
          break;
        }
      }
      lambda *= settings.lambdaScaleUp;
      if (lambda > settings.lambdaMax) {
        std::ostringstream os;
        os << "optimizeLm: non-convergence, lambda " << lambda << " exceeds "
           << settings.lambdaMax << " at iteration " << report.iterations
           << " (error " << error << ", accepted steps " << report.acceptedSteps
           << ")";
        throw SolveError(os.str());
      }
    }
    if (settings.verbose) {
      std::ostringstream os;
      os << "iter " << report.iterations << " error " << error << " lambda "
         << lambda;
      // verbose output goes through warnings so callers decide where it lands
      report.warnings.push_back(os.str());
    }
  }

  if (!done) {
    report.converged = true;
    report.status = "max-iterations";
  }
  report.finalError = error;
  report.lambdaFinal = lambda;
  report.errorByGroup = graph.errorByGroup(current);

  for (const auto& f : graph.factors()) {
    if (!f->noise().isHard()) continue;
    const double raw = f->evaluate(current).norm();
    if (raw > 1e-6) {
      std::ostringstream os;
      os << "hard-constraint violation: " << describeFactor(*f)
         << " raw residual norm " << raw;
      report.warnings.push_back(os.str());
    }
  }
  return {std::move(current), std::move(report)};
}

}  // namespace chainstation
