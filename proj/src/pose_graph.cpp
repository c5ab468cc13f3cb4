#include <ralc/pose_graph.hpp>

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <deque>
#include <sstream>

namespace ralc {

const char* to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::odometry: return "odometry";
    case FactorKind::loop_closure: return "loop_closure";
    case FactorKind::recovered: return "recovered";
  }
  return "unknown";
}

bool CliqueFactor::operator==(const CliqueFactor& other) const {
  return id == other.id && vertices == other.vertices && relative == other.relative &&
         information.rows() == other.information.rows() &&
         information.cols() == other.information.cols() && information == other.information;
}

// ---------------------------------------------------------------------------------------------
// PoseGraph

void PoseGraph::require(VertexId id) const {
  if (!contains(id)) throw GraphError("unknown vertex " + std::to_string(id));
}

const Keyframe& PoseGraph::keyframe(VertexId id) const {
  require(id);
  return keyframes_.at(id);
}

Keyframe& PoseGraph::keyframe(VertexId id) {
  require(id);
  return keyframes_.at(id);
}

VertexId PoseGraph::latest() const {
  if (empty()) throw GraphError("empty graph");
  return latest_;
}

VertexId PoseGraph::root() const {
  if (empty()) throw GraphError("empty graph");
  return root_;
}

VertexId PoseGraph::add_keyframe(const Pose2& pose, const std::optional<OdometryLink>& odometry,
                                 std::optional<RegionId> region_id, double feature_score,
                                 FactorKind link_kind) {
  if (odometry) {
    require(odometry->prev);
    if (!is_spd(odometry->information)) throw GraphError("information matrix is not SPD");
  } else if (!empty()) {
    throw GraphError("odometry required for every keyframe after the first");
  }
  const VertexId id = next_vertex_++;
  keyframes_.emplace(id, Keyframe{id, pose, region_id, std::clamp(feature_score, 0.0, 1.0), false});
  if (!odometry) {
    root_ = id;
    gauge_pose_ = pose;
  } else {
    factors_.push_back({next_factor_++, odometry->prev, id, odometry->measurement,
                        odometry->information, link_kind});
  }
  latest_ = id;
  return id;
}

FactorId PoseGraph::add_loop_closure(VertexId a, VertexId b, const Pose2& measurement,
                                     const InfoMatrix3& information) {
  if (a == b) throw GraphError("self-loop");
  return add_factor(a, b, measurement, information, FactorKind::loop_closure);
}

FactorId PoseGraph::add_factor(VertexId a, VertexId b, const Pose2& measurement,
                               const InfoMatrix3& information, FactorKind kind) {
  if (a == b) throw GraphError("self-loop");
  require(a);
  require(b);
  if (!is_spd(information)) throw GraphError("information matrix is not SPD");
  const FactorId id = next_factor_++;
  factors_.push_back({id, a, b, measurement, information, kind});
  return id;
}

FactorId PoseGraph::add_clique_factor(std::vector<VertexId> vertices, std::vector<Pose2> relative,
                                      Eigen::MatrixXd information) {
  if (vertices.size() < 2) throw GraphError("clique factor needs at least two vertices");
  for (VertexId v : vertices) require(v);
  const auto dim = static_cast<Eigen::Index>(3 * (vertices.size() - 1));
  if (relative.size() + 1 != vertices.size() || information.rows() != dim || information.cols() != dim)
    throw GraphError("clique factor dimension mismatch");
  const FactorId id = next_factor_++;
  cliques_.push_back({id, std::move(vertices), std::move(relative), std::move(information)});
  return id;
}

void PoseGraph::remove_keyframes(const std::set<VertexId>& ids) {
  for (VertexId v : ids) require(v);
  if (ids.count(latest_)) throw GraphError("cannot remove the latest keyframe");
  if (ids.count(root_)) throw GraphError("cannot remove the gauge keyframe");
  std::erase_if(factors_, [&](const Factor& f) { return ids.count(f.from) || ids.count(f.to); });
  std::erase_if(cliques_, [&](const CliqueFactor& c) {
    return std::any_of(c.vertices.begin(), c.vertices.end(), [&](VertexId v) { return ids.count(v); });
  });
  for (VertexId v : ids) keyframes_.erase(v);
}

std::set<VertexId> PoseGraph::neighbors(VertexId id) const {
  require(id);
  std::set<VertexId> out;
  for (const auto& f : factors_) {
    if (f.from == id) out.insert(f.to);
    if (f.to == id) out.insert(f.from);
  }
  for (const auto& c : cliques_) {
    if (std::find(c.vertices.begin(), c.vertices.end(), id) == c.vertices.end()) continue;
    for (VertexId v : c.vertices)
      if (v != id) out.insert(v);
  }
  return out;
}

bool PoseGraph::is_connected() const {
  if (keyframes_.size() <= 1) return true;
  std::unordered_map<VertexId, std::vector<VertexId>> adj;
  for (const auto& f : factors_) {
    adj[f.from].push_back(f.to);
    adj[f.to].push_back(f.from);
  }
  for (const auto& c : cliques_)
    for (std::size_t i = 1; i < c.vertices.size(); ++i) {
      adj[c.vertices[0]].push_back(c.vertices[i]);
      adj[c.vertices[i]].push_back(c.vertices[0]);
    }
  std::set<VertexId> seen{keyframes_.begin()->first};
  std::deque<VertexId> queue{keyframes_.begin()->first};
  while (!queue.empty()) {
    const VertexId v = queue.front();
    queue.pop_front();
    for (VertexId n : adj[v])
      if (seen.insert(n).second) queue.push_back(n);
  }
  return seen.size() == keyframes_.size();
}

namespace {

Eigen::Vector3d prior_residual(const Pose2& gauge, const Pose2& x) { return between(gauge, x).vector(); }

// Jacobian of vec(between(gauge, x)) w.r.t. a right perturbation of x.
Eigen::Matrix3d prior_jacobian(const Pose2& gauge, const Pose2& x) {
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  j.topLeftCorner<2, 2>() = gauge.rotation().transpose() * x.rotation();
  j(2, 2) = 1;
  return j;
}

InfoMatrix3 gauge_information() { return InfoMatrix3::Identity() * kGaugePriorInformation; }

}  // namespace

double PoseGraph::cost() const {
  if (empty()) return 0;
  double c = 0;
  for (const auto& f : factors_) {
    const Eigen::Vector3d r = between(f.measurement, between(keyframes_.at(f.from).pose, keyframes_.at(f.to).pose)).vector();
    c += r.dot(f.information * r);
  }
  for (const auto& cl : cliques_) {
    Eigen::VectorXd r(cl.information.rows());
    const Pose2& x0 = keyframes_.at(cl.vertices[0]).pose;
    for (std::size_t i = 1; i < cl.vertices.size(); ++i)
      r.segment<3>(3 * (i - 1)) = between(cl.relative[i - 1], between(x0, keyframes_.at(cl.vertices[i]).pose)).vector();
    c += r.dot(cl.information * r);
  }
  const Eigen::Vector3d r = prior_residual(gauge_pose_, keyframes_.at(root_).pose);
  c += r.dot(gauge_information() * r);
  return c;
}

std::string PoseGraph::to_g2o() const {
  std::ostringstream os;
  char buf[512];
  for (const auto& [id, kf] : keyframes_) {
    std::snprintf(buf, sizeof buf, "VERTEX_SE2 %lld %.9g %.9g %.9g\n", static_cast<long long>(id),
                  kf.pose.x, kf.pose.y, kf.pose.theta);
    os << buf;
  }
  for (const auto& f : factors_) {
    const auto& m = f.information;
    std::snprintf(buf, sizeof buf, "EDGE_SE2 %lld %lld %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n",
                  static_cast<long long>(f.from), static_cast<long long>(f.to), f.measurement.x,
                  f.measurement.y, f.measurement.theta, m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2),
                  m(2, 2));
    os << buf;
  }
  return os.str();
}

PoseGraph::State PoseGraph::state() const {
  return {keyframes_, factors_, cliques_, next_vertex_, next_factor_, latest_, root_, gauge_pose_};
}

PoseGraph PoseGraph::from_state(State s) {
  PoseGraph g;
  g.keyframes_ = std::move(s.keyframes);
  g.factors_ = std::move(s.factors);
  g.cliques_ = std::move(s.cliques);
  g.next_vertex_ = s.next_vertex;
  g.next_factor_ = s.next_factor;
  g.latest_ = s.latest;
  g.root_ = s.root;
  g.gauge_pose_ = s.gauge_pose;
  return g;
}

// ---------------------------------------------------------------------------------------------
// Linearization

LinearSystem linearize(const PoseGraph& graph) {
  LinearSystem sys;
  const auto& kfs = graph.keyframes();
  sys.order.reserve(kfs.size());
  for (const auto& [id, kf] : kfs) {
    sys.index.emplace(id, static_cast<int>(sys.order.size()));
    sys.order.push_back(id);
  }
  const Eigen::Index n = 3 * static_cast<Eigen::Index>(sys.order.size());
  sys.gradient = Eigen::VectorXd::Zero(n);
  if (kfs.empty()) {
    sys.hessian.resize(0, 0);
    return sys;
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(graph.factors().size() * 36 + 9);
  auto add_block = [&](int bi, int bj, const Eigen::Matrix3d& m) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) triplets.emplace_back(3 * bi + r, 3 * bj + c, m(r, c));
  };

  for (const auto& f : graph.factors()) {
    const auto ej = error_jacobians(f.measurement, kfs.at(f.from).pose, kfs.at(f.to).pose);
    const int i = sys.index.at(f.from), j = sys.index.at(f.to);
    const Eigen::Matrix3d wa = f.information * ej.ja, wb = f.information * ej.jb;
    add_block(i, i, ej.ja.transpose() * wa);
    add_block(i, j, ej.ja.transpose() * wb);
    add_block(j, i, ej.jb.transpose() * wa);
    add_block(j, j, ej.jb.transpose() * wb);
    sys.gradient.segment<3>(3 * i) += wa.transpose() * ej.residual;
    sys.gradient.segment<3>(3 * j) += wb.transpose() * ej.residual;
    sys.cost += ej.residual.dot(f.information * ej.residual);
  }

  for (const auto& cl : graph.clique_factors()) {
    const std::size_t m = cl.vertices.size();
    const Eigen::Index dim = cl.information.rows();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(dim, 3 * static_cast<Eigen::Index>(m));
    Eigen::VectorXd r(dim);
    const Pose2& x0 = kfs.at(cl.vertices[0]).pose;
    for (std::size_t k = 1; k < m; ++k) {
      const auto ej = error_jacobians(cl.relative[k - 1], x0, kfs.at(cl.vertices[k]).pose);
      const auto row = static_cast<Eigen::Index>(3 * (k - 1));
      r.segment<3>(row) = ej.residual;
      jac.block<3, 3>(row, 0) = ej.ja;
      jac.block<3, 3>(row, 3 * static_cast<Eigen::Index>(k)) = ej.jb;
    }
    const Eigen::MatrixXd w = cl.information * jac;
    const Eigen::MatrixXd h = jac.transpose() * w;
    const Eigen::VectorXd g = w.transpose() * r;
    for (std::size_t a = 0; a < m; ++a) {
      const int ia = sys.index.at(cl.vertices[a]);
      sys.gradient.segment<3>(3 * ia) += g.segment<3>(3 * static_cast<Eigen::Index>(a));
      for (std::size_t b = 0; b < m; ++b)
        add_block(ia, sys.index.at(cl.vertices[b]),
                  h.block<3, 3>(3 * static_cast<Eigen::Index>(a), 3 * static_cast<Eigen::Index>(b)));
    }
    sys.cost += r.dot(cl.information * r);
  }

  const Pose2& root_pose = kfs.at(graph.root()).pose;
  const Eigen::Vector3d pr = prior_residual(graph.gauge_pose(), root_pose);
  const Eigen::Matrix3d pj = prior_jacobian(graph.gauge_pose(), root_pose);
  const int ir = sys.index.at(graph.root());
  add_block(ir, ir, pj.transpose() * gauge_information() * pj);
  sys.gradient.segment<3>(3 * ir) += pj.transpose() * gauge_information() * pr;
  sys.cost += pr.dot(gauge_information() * pr);

  sys.hessian.resize(n, n);
  sys.hessian.setFromTriplets(triplets.begin(), triplets.end());
  return sys;
}

// ---------------------------------------------------------------------------------------------
// Gauss-Newton

namespace {

Eigen::VectorXd solve_normal_equations(const LinearSystem& sys, LinearSolver solver, int iteration) {
  if (solver == LinearSolver::dense_cholesky) {
    Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(sys.hessian));
    if (llt.info() != Eigen::Success)
      throw OptimizationError("Cholesky factorization failed", iteration);
    return llt.solve(-sys.gradient);
  }
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt(sys.hessian);
  if (llt.info() != Eigen::Success) throw OptimizationError("Cholesky factorization failed", iteration);
  Eigen::VectorXd delta = llt.solve(-sys.gradient);
  if (!delta.allFinite()) throw OptimizationError("non-finite Gauss-Newton step", iteration);
  return delta;
}

std::map<VertexId, Pose2> snapshot_poses(const PoseGraph& graph) {
  std::map<VertexId, Pose2> out;
  for (const auto& [id, kf] : graph.keyframes()) out.emplace(id, kf.pose);
  return out;
}

void apply_step(PoseGraph& graph, const LinearSystem& sys, const Eigen::VectorXd& delta, double scale) {
  for (std::size_t k = 0; k < sys.order.size(); ++k) {
    Keyframe& kf = graph.keyframe(sys.order[k]);
    kf.pose = retract(kf.pose, Eigen::Vector3d(scale * delta.segment<3>(3 * static_cast<Eigen::Index>(k))));
  }
}

}  // namespace

OptimizeReport optimize(PoseGraph& graph, const OptimizeOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  OptimizeReport report;
  report.initial_cost = report.final_cost = graph.cost();
  if (graph.size() <= 1 || (graph.factors().empty() && graph.clique_factors().empty())) {
    // gauge-only: the prior is satisfied by construction unless the root moved
    if (!graph.empty() && report.initial_cost > 0) {
      graph.keyframe(graph.root()).pose = graph.gauge_pose();
      report.iterations = 1;
      report.final_cost = graph.cost();
    }
    report.converged = true;
    report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

  const auto initial_poses = snapshot_poses(graph);
  double current = report.initial_cost;
  for (int it = 0; it < options.max_iterations; ++it) {
    const LinearSystem sys = linearize(graph);
    const Eigen::VectorXd delta = solve_normal_equations(sys, options.solver, it);
    const auto saved = snapshot_poses(graph);
    ++report.iterations;

    // Plain Gauss-Newton step; halve only if it would increase the cost.
    double scale = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      apply_step(graph, sys, delta, scale);
      const double next = graph.cost();
      // tolerate roundoff-level increases so the final steps still polish the gradient
      if (next <= current + 1e-10 * current) {
        current = next;
        accepted = true;
      } else {
        for (const auto& [id, p] : saved) graph.keyframe(id).pose = p;
        scale *= 0.5;
      }
    }
    const double step = delta.cwiseAbs().maxCoeff();
    if (!accepted) {
      report.converged = step < std::max(options.convergence_delta, 1e-6);
      break;
    }
    if (step * scale < options.convergence_delta) {
      report.converged = true;
      break;
    }
  }
  if (current > report.initial_cost) {
    for (const auto& [id, p] : initial_poses) graph.keyframe(id).pose = p;
    current = report.initial_cost;
  }
  report.final_cost = current;
  report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------------------------
// Covariance recovery

struct CovarianceRecovery::Impl {
  LinearSystem sys;
  std::unordered_map<VertexId, Pose2> poses;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
  std::unordered_map<VertexId, Eigen::MatrixXd> cache;
};

CovarianceRecovery::CovarianceRecovery(const PoseGraph& graph) : impl_(std::make_unique<Impl>()) {
  impl_->sys = linearize(graph);
  for (const auto& [id, kf] : graph.keyframes()) impl_->poses.emplace(id, kf.pose);
  if (graph.empty()) return;
  impl_->llt.compute(impl_->sys.hessian);
  if (impl_->llt.info() != Eigen::Success) throw OptimizationError("Cholesky factorization failed", 0);
}

CovarianceRecovery::~CovarianceRecovery() = default;
CovarianceRecovery::CovarianceRecovery(CovarianceRecovery&&) noexcept = default;
CovarianceRecovery& CovarianceRecovery::operator=(CovarianceRecovery&&) noexcept = default;

const Eigen::MatrixXd& CovarianceRecovery::columns(VertexId v) {
  auto it = impl_->cache.find(v);
  if (it != impl_->cache.end()) return it->second;
  const auto idx = impl_->sys.index.find(v);
  if (idx == impl_->sys.index.end()) throw GraphError("unknown vertex " + std::to_string(v));
  const Eigen::Index n = impl_->sys.hessian.rows();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 3);
  rhs.block<3, 3>(3 * idx->second, 0).setIdentity();
  return impl_->cache.emplace(v, impl_->llt.solve(rhs)).first->second;
}

Eigen::Matrix<double, 6, 6> CovarianceRecovery::joint(VertexId a, VertexId b) {
  const Eigen::MatrixXd& ca = columns(a);
  const Eigen::MatrixXd& cb = columns(b);
  const int ia = impl_->sys.index.at(a), ib = impl_->sys.index.at(b);
  Eigen::Matrix<double, 6, 6> out;
  out.topLeftCorner<3, 3>() = ca.block<3, 3>(3 * ia, 0);
  out.topRightCorner<3, 3>() = cb.block<3, 3>(3 * ia, 0);
  out.bottomLeftCorner<3, 3>() = ca.block<3, 3>(3 * ib, 0);
  out.bottomRightCorner<3, 3>() = cb.block<3, 3>(3 * ib, 0);
  return 0.5 * (out + out.transpose());
}

Eigen::Matrix3d CovarianceRecovery::relative(VertexId a, VertexId b) {
  const Eigen::Matrix<double, 6, 6> cov = joint(a, b);
  const Pose2& pa = impl_->poses.at(a);
  const Pose2& pb = impl_->poses.at(b);
  const auto ej = error_jacobians(between(pa, pb), pa, pb);
  Eigen::Matrix<double, 3, 6> j;
  j << ej.ja, ej.jb;
  const Eigen::Matrix3d rel = j * cov * j.transpose();
  return 0.5 * (rel + rel.transpose());
}

Eigen::Matrix<double, 6, 6> marginal_covariance(const PoseGraph& graph, VertexId a, VertexId b) {
  if (!graph.contains(a)) throw GraphError("unknown vertex " + std::to_string(a));
  if (!graph.contains(b)) throw GraphError("unknown vertex " + std::to_string(b));
  CovarianceRecovery rec(graph);
  return rec.joint(a, b);
}

InfoMatrix3 default_closure_information() {
  return Eigen::Vector3d(400.0, 400.0, 1600.0).asDiagonal();
}

double uncertainty_reduction(const Eigen::Matrix3d& sigma_minus, const InfoMatrix3& closure_information) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> closure_eig(closure_information);
  if (closure_eig.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, closure_eig.eigenvalues().maxCoeff()))
    throw GraphError("closure information is not positive semi-definite");
  Eigen::LLT<Eigen::Matrix3d> prior(sigma_minus);
  if (prior.info() != Eigen::Success) throw GraphError("prior covariance is singular");
  const Eigen::Matrix3d prior_info = prior.solve(Eigen::Matrix3d::Identity());
  Eigen::LLT<Eigen::Matrix3d> post(prior_info + closure_information);
  if (post.info() != Eigen::Success) throw GraphError("posterior covariance is singular");
  const Eigen::Matrix3d sigma_plus = post.solve(Eigen::Matrix3d::Identity());
  const double det_plus = sigma_plus.determinant();
  if (!(det_plus > 0) || !std::isfinite(det_plus)) throw GraphError("posterior covariance is singular");
  return sigma_minus.determinant() / det_plus;
}

double uncertainty_reduction(const PoseGraph& graph, VertexId robot, VertexId target,
                             const InfoMatrix3& closure_information) {
  if (!graph.contains(robot)) throw GraphError("unknown vertex " + std::to_string(robot));
  if (!graph.contains(target)) throw GraphError("unknown vertex " + std::to_string(target));
  CovarianceRecovery rec(graph);
  return uncertainty_reduction(rec.relative(robot, target), closure_information);
}

}  // namespace ralc
