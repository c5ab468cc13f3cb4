#include <ralc/marginalization.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_map>

namespace ralc {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index blk(std::size_t i) { return 3 * static_cast<Index>(i); }

MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Orthonormal basis of the complement of the global-motion directions of the kept poses.
MatrixXd non_gauge_basis(const EliminationClique& clique) {
  const std::size_t m = clique.kept.size();
  MatrixXd null(blk(m), 3);
  for (std::size_t i = 0; i < m; ++i) null.block<3, 3>(blk(i), 0) = inverse_adjoint(clique.linearization.at(clique.kept[i]));
  Eigen::HouseholderQR<MatrixXd> qr(null);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(blk(m), blk(m));
  return q.rightCols(blk(m) - 3);
}

// Jacobian (3 x 3m) of the relative pose of an edge at the linearization point.
MatrixXd edge_jacobian(const EliminationClique& clique, const std::unordered_map<VertexId, std::size_t>& pos,
                       VertexId a, VertexId b) {
  const Pose2& pa = clique.linearization.at(a);
  const Pose2& pb = clique.linearization.at(b);
  const auto ej = error_jacobians(between(pa, pb), pa, pb);
  MatrixXd j = MatrixXd::Zero(3, blk(clique.kept.size()));
  j.block<3, 3>(0, blk(pos.at(a))) = ej.ja;
  j.block<3, 3>(0, blk(pos.at(b))) = ej.jb;
  return j;
}

std::unordered_map<VertexId, std::size_t> positions(const std::vector<VertexId>& kept) {
  std::unordered_map<VertexId, std::size_t> pos;
  for (std::size_t i = 0; i < kept.size(); ++i) pos.emplace(kept[i], i);
  return pos;
}

MatrixXd inverse_sqrt_spd(const Eigen::Matrix3d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Eigen::Matrix3d sqrt_spd(const Eigen::Matrix3d& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Eigen::Matrix3d project_spd(const Eigen::Matrix3d& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(0.5 * (m + m.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(floor).asDiagonal() * es.eigenvectors().transpose();
}

// Symmetric 3x3 basis used to parameterize edge informations.
const std::array<Eigen::Matrix3d, 6>& sym_basis() {
  static const std::array<Eigen::Matrix3d, 6> basis = [] {
    std::array<Eigen::Matrix3d, 6> b;
    const int rows[6] = {0, 1, 2, 0, 0, 1}, cols[6] = {0, 1, 2, 1, 2, 2};
    for (int p = 0; p < 6; ++p) {
      b[p].setZero();
      b[p](rows[p], cols[p]) = 1;
      b[p](cols[p], rows[p]) = 1;
    }
    return b;
  }();
  return basis;
}

// KLD minimization over edge informations in whitened, per-edge normalized coordinates, where
// the objective reads f = sum tr(W_e) - log det(sum C_e^T W_e C_e) and the target is identity.
class KldProblem {
 public:
  explicit KldProblem(std::vector<MatrixXd> c) : c_(std::move(c)), d_(c_.empty() ? 0 : c_[0].cols()) {}

  Index dim() const { return d_; }

  bool implied(const std::vector<Eigen::Matrix3d>& w, MatrixXd& q) const {
    q = MatrixXd::Zero(d_, d_);
    for (std::size_t e = 0; e < c_.size(); ++e) q.noalias() += c_[e].transpose() * w[e] * c_[e];
    Eigen::LLT<MatrixXd> llt(q);
    return llt.info() == Eigen::Success;
  }

  double objective(const std::vector<Eigen::Matrix3d>& w) const {
    MatrixXd q;
    if (!implied(w, q)) return std::numeric_limits<double>::infinity();
    Eigen::LLT<MatrixXd> llt(q);
    double trace = 0;
    for (const auto& we : w) trace += we.trace();
    const double logdet = 2 * llt.matrixLLT().diagonal().array().log().sum();
    return trace - logdet;
  }

  double kld(const std::vector<Eigen::Matrix3d>& w) const { return 0.5 * (objective(w) - static_cast<double>(d_)); }

  // Gradient blocks G_e = I - C_e Q^-1 C_e^T.
  std::vector<Eigen::Matrix3d> gradient(const std::vector<Eigen::Matrix3d>& w, MatrixXd* qinv_out = nullptr) const {
    MatrixXd q;
    implied(w, q);
    const MatrixXd qinv = q.llt().solve(MatrixXd::Identity(d_, d_));
    std::vector<Eigen::Matrix3d> g(c_.size());
    for (std::size_t e = 0; e < c_.size(); ++e)
      g[e] = Eigen::Matrix3d::Identity() - c_[e] * qinv * c_[e].transpose();
    if (qinv_out) *qinv_out = qinv;
    return g;
  }

  // Damped Newton on the unconstrained problem. Returns false if it failed to make progress.
  bool newton(std::vector<Eigen::Matrix3d>& w, int max_iterations = 100) const {
    const auto& basis = sym_basis();
    const Index np = 6 * static_cast<Index>(c_.size());
    double f = objective(w);
    if (!std::isfinite(f)) return false;
    for (int it = 0; it < max_iterations; ++it) {
      MatrixXd qinv;
      const auto g = gradient(w, &qinv);
      VectorXd grad(np);
      for (std::size_t e = 0; e < c_.size(); ++e)
        for (int p = 0; p < 6; ++p) grad[6 * static_cast<Index>(e) + p] = (g[e] * basis[p]).trace();

      std::vector<MatrixXd> cq(c_.size());
      for (std::size_t e = 0; e < c_.size(); ++e) cq[e] = c_[e] * qinv;
      MatrixXd h(np, np);
      for (std::size_t e = 0; e < c_.size(); ++e) {
        for (std::size_t f2 = e; f2 < c_.size(); ++f2) {
          const Eigen::Matrix3d k_ef = cq[e] * c_[f2].transpose();
          const Eigen::Matrix3d k_fe = k_ef.transpose();
          for (int p = 0; p < 6; ++p)
            for (int q = 0; q < 6; ++q) {
              const double v = (k_ef * basis[q] * k_fe * basis[p]).trace();
              h(6 * static_cast<Index>(e) + p, 6 * static_cast<Index>(f2) + q) = v;
              h(6 * static_cast<Index>(f2) + q, 6 * static_cast<Index>(e) + p) = v;
            }
        }
      }
      h.diagonal().array() += 1e-12 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
      const VectorXd step = -h.ldlt().solve(grad);
      const double decrement = -grad.dot(step);
      if (!step.allFinite()) return false;
      if (decrement < 1e-20) return true;

      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls) {
        std::vector<Eigen::Matrix3d> trial = w;
        for (std::size_t e = 0; e < c_.size(); ++e)
          for (int p = 0; p < 6; ++p) trial[e] += alpha * step[6 * static_cast<Index>(e) + p] * basis[p];
        const double ft = objective(trial);
        if (std::isfinite(ft) && ft <= f - 1e-4 * alpha * decrement) {
          w = std::move(trial);
          f = ft;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) return decrement < 1e-12;
    }
    return true;
  }

  // Projected gradient descent keeping every edge information SPD.
  void projected_descent(std::vector<Eigen::Matrix3d>& w, double floor, int max_iterations = 2000) const {
    for (auto& we : w) we = project_spd(we, floor);
    double f = objective(w);
    double eta = 0.5;
    for (int it = 0; it < max_iterations && std::isfinite(f); ++it) {
      const auto g = gradient(w);
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls) {
        std::vector<Eigen::Matrix3d> trial(w.size());
        for (std::size_t e = 0; e < w.size(); ++e) trial[e] = project_spd(w[e] - eta * g[e], floor);
        const double ft = objective(trial);
        if (std::isfinite(ft) && ft < f) {
          const double change = f - ft;
          w = std::move(trial);
          f = ft;
          moved = true;
          eta *= 1.5;
          if (change < 1e-14) return;
          break;
        }
        eta *= 0.5;
      }
      if (!moved) return;
    }
  }

 private:
  std::vector<MatrixXd> c_;
  Index d_;
};

// Shared setup of the reduced problem for a clique and a set of edges.
struct ReducedClique {
  MatrixXd basis;               // U, 3m x d
  MatrixXd whitening;           // L^-1 with P~ = L L^T
  std::vector<MatrixXd> b_hat;  // B_e U L^-T, 3 x d
};

ReducedClique reduce(const EliminationClique& clique, const RecoveredTopology& topology) {
  ReducedClique r;
  r.basis = non_gauge_basis(clique);
  const MatrixXd p = sym(r.basis.transpose() * clique.target_information * r.basis);
  Eigen::LLT<MatrixXd> llt(p);
  if (llt.info() != Eigen::Success) throw RecoveryError("target information is degenerate beyond the gauge");
  const MatrixXd l = llt.matrixL();
  r.whitening = l.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(l.rows(), l.cols()));
  const auto pos = positions(clique.kept);
  for (const auto& [a, b] : topology.edges)
    r.b_hat.push_back(edge_jacobian(clique, pos, a, b) * r.basis * r.whitening.transpose());
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

Eigen::MatrixXd schur_complement(const Eigen::MatrixXd& info, Eigen::Index kept_dim) {
  const Index n = info.rows();
  const Index r = n - kept_dim;
  if (r == 0) return info;
  const MatrixXd a = info.topLeftCorner(kept_dim, kept_dim);
  const MatrixXd b = info.topRightCorner(kept_dim, r);
  const MatrixXd d = info.bottomRightCorner(r, r);
  Eigen::LLT<MatrixXd> llt(d);
  if (llt.info() != Eigen::Success) throw RecoveryError("eliminated block is singular");
  return sym(a - b * llt.solve(b.transpose()));
}

std::set<VertexId> select_anchors(PoseGraph& graph, RegionId region, int count, double distance_weight,
                                  const std::set<VertexId>& forced) {
  std::vector<VertexId> members;
  for (const auto& [id, kf] : graph.keyframes())
    if (kf.region_id == region) members.push_back(id);
  if (members.empty()) throw GraphError("region " + std::to_string(region) + " has no keyframes");

  std::set<VertexId> chosen;
  for (VertexId f : forced)
    if (std::find(members.begin(), members.end(), f) != members.end()) chosen.insert(f);
  const auto target = static_cast<std::size_t>(std::max(count, 1));
  while (chosen.size() < std::min(target, members.size())) {
    VertexId best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (VertexId v : members) {
      if (chosen.count(v)) continue;
      const Keyframe& kf = graph.keyframe(v);
      double score = kf.feature_score;
      if (!chosen.empty()) {
        double nearest = std::numeric_limits<double>::infinity();
        for (VertexId c : chosen)
          nearest = std::min(nearest, (kf.pose.translation() - graph.keyframe(c).pose.translation()).norm());
        score += distance_weight * nearest;
      }
      if (score > best_score) {
        best_score = score;
        best = v;
      }
    }
    chosen.insert(best);
  }
  for (VertexId v : chosen) graph.keyframe(v).is_anchor = true;
  return chosen;
}

EliminationClique schur_marginalize(const PoseGraph& graph, const std::set<VertexId>& removed) {
  if (removed.empty()) throw GraphError("nothing to marginalize");
  for (VertexId v : removed)
    if (!graph.contains(v)) throw GraphError("unknown vertex " + std::to_string(v));

  EliminationClique clique;
  clique.removed = removed;
  std::set<VertexId> blanket;
  for (const auto& f : graph.factors()) {
    const bool rf = removed.count(f.from), rt = removed.count(f.to);
    if (rf && !rt) blanket.insert(f.to);
    if (rt && !rf) blanket.insert(f.from);
  }
  for (const auto& c : graph.clique_factors()) {
    const bool touches = std::any_of(c.vertices.begin(), c.vertices.end(), [&](VertexId v) { return removed.count(v); });
    if (!touches) continue;
    for (VertexId v : c.vertices)
      if (!removed.count(v)) blanket.insert(v);
  }
  clique.kept.assign(blanket.begin(), blanket.end());

  std::vector<VertexId> order = clique.kept;
  order.insert(order.end(), removed.begin(), removed.end());
  const auto pos = positions(order);
  const Index n = blk(order.size());
  MatrixXd info = MatrixXd::Zero(n, n);

  for (const auto& f : graph.factors()) {
    if (!removed.count(f.from) && !removed.count(f.to)) continue;
    const auto ej = error_jacobians(f.measurement, graph.keyframe(f.from).pose, graph.keyframe(f.to).pose);
    const Index i = blk(pos.at(f.from)), j = blk(pos.at(f.to));
    info.block<3, 3>(i, i) += ej.ja.transpose() * f.information * ej.ja;
    info.block<3, 3>(i, j) += ej.ja.transpose() * f.information * ej.jb;
    info.block<3, 3>(j, i) += ej.jb.transpose() * f.information * ej.ja;
    info.block<3, 3>(j, j) += ej.jb.transpose() * f.information * ej.jb;
  }
  for (const auto& c : graph.clique_factors()) {
    const bool touches = std::any_of(c.vertices.begin(), c.vertices.end(), [&](VertexId v) { return removed.count(v); });
    if (!touches) continue;
    const std::size_t m = c.vertices.size();
    MatrixXd jac = MatrixXd::Zero(c.information.rows(), blk(m));
    const Pose2& x0 = graph.keyframe(c.vertices[0]).pose;
    for (std::size_t k = 1; k < m; ++k) {
      const auto ej = error_jacobians(c.relative[k - 1], x0, graph.keyframe(c.vertices[k]).pose);
      jac.block<3, 3>(blk(k - 1), 0) = ej.ja;
      jac.block<3, 3>(blk(k - 1), blk(k)) = ej.jb;
    }
    const MatrixXd h = jac.transpose() * c.information * jac;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        info.block<3, 3>(blk(pos.at(c.vertices[a])), blk(pos.at(c.vertices[b]))) += h.block<3, 3>(blk(a), blk(b));
  }
  if (removed.count(graph.root())) {
    const Pose2& x = graph.keyframe(graph.root()).pose;
    Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
    j.topLeftCorner<2, 2>() = graph.gauge_pose().rotation().transpose() * x.rotation();
    j(2, 2) = 1;
    const Index r = blk(pos.at(graph.root()));
    info.block<3, 3>(r, r) += j.transpose() * (kGaugePriorInformation * Eigen::Matrix3d::Identity()) * j;
  }

  clique.target_information = schur_complement(info, blk(clique.kept.size()));
  for (VertexId v : clique.kept) clique.linearization.emplace(v, graph.keyframe(v).pose);
  return clique;
}

RecoveredTopology complete_topology(const EliminationClique& clique) {
  RecoveredTopology t;
  for (std::size_t i = 0; i < clique.kept.size(); ++i)
    for (std::size_t j = i + 1; j < clique.kept.size(); ++j) t.edges.emplace_back(clique.kept[i], clique.kept[j]);
  return t;
}

RecoveredTopology chow_liu_topology(const EliminationClique& clique) {
  const std::size_t m = clique.kept.size();
  RecoveredTopology t;
  if (m < 2) return t;
  const MatrixXd u = non_gauge_basis(clique);
  const MatrixXd p = sym(u.transpose() * clique.target_information * u);
  Eigen::LDLT<MatrixXd> ldlt(p);
  const MatrixXd cov = u * ldlt.solve(u.transpose());

  auto logdet = [](const MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(s));
    return es.eigenvalues().cwiseMax(1e-300).array().log().sum();
  };
  std::vector<double> self(m);
  for (std::size_t i = 0; i < m; ++i) self[i] = logdet(cov.block<3, 3>(blk(i), blk(i)));
  MatrixXd mi = MatrixXd::Zero(static_cast<Index>(m), static_cast<Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      MatrixXd pair(6, 6);
      pair << cov.block<3, 3>(blk(i), blk(i)), cov.block<3, 3>(blk(i), blk(j)), cov.block<3, 3>(blk(j), blk(i)),
          cov.block<3, 3>(blk(j), blk(j));
      mi(static_cast<Index>(i), static_cast<Index>(j)) = mi(static_cast<Index>(j), static_cast<Index>(i)) =
          0.5 * (self[i] + self[j] - logdet(pair));
    }

  // Prim's algorithm for the maximum-weight spanning tree; ties go to the lower index.
  std::vector<bool> in_tree(m, false);
  in_tree[0] = true;
  for (std::size_t added = 1; added < m; ++added) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!in_tree[i]) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (in_tree[j]) continue;
        const double w = mi(static_cast<Index>(i), static_cast<Index>(j));
        if (w > best) {
          best = w;
          bi = i;
          bj = j;
        }
      }
    }
    in_tree[bj] = true;
    t.edges.emplace_back(clique.kept[std::min(bi, bj)], clique.kept[std::max(bi, bj)]);
  }
  return t;
}

std::vector<Factor> recover_factors(const EliminationClique& clique, const RecoveredTopology& topology) {
  if (topology.edges.empty()) {
    if (clique.kept.size() <= 1) return {};
    throw RecoveryError("empty topology over a multi-vertex clique");
  }
  {
    // topology must connect every kept vertex
    std::map<VertexId, std::vector<VertexId>> adj;
    for (const auto& [a, b] : topology.edges) {
      if (!clique.linearization.count(a) || !clique.linearization.count(b))
        throw RecoveryError("topology edge outside the clique");
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
    std::set<VertexId> seen{clique.kept[0]};
    std::deque<VertexId> queue{clique.kept[0]};
    while (!queue.empty()) {
      const VertexId v = queue.front();
      queue.pop_front();
      for (VertexId n : adj[v])
        if (seen.insert(n).second) queue.push_back(n);
    }
    if (seen.size() != clique.kept.size()) throw RecoveryError("topology does not connect the clique");
  }

  const ReducedClique red = reduce(clique, topology);
  std::vector<MatrixXd> c(red.b_hat.size());
  std::vector<Eigen::Matrix3d> m(red.b_hat.size());
  for (std::size_t e = 0; e < c.size(); ++e) {
    const Eigen::Matrix3d bbt = red.b_hat[e] * red.b_hat[e].transpose();
    if (Eigen::LLT<Eigen::Matrix3d>(bbt).info() != Eigen::Success) throw RecoveryError("degenerate topology edge");
    m[e] = sqrt_spd(bbt.inverse());
    c[e] = inverse_sqrt_spd(bbt) * red.b_hat[e];
  }

  const KldProblem problem(c);
  const double scale = static_cast<double>(clique.kept.size() - 1) / static_cast<double>(c.size());
  std::vector<Eigen::Matrix3d> w(c.size(), Eigen::Matrix3d::Identity() * scale);
  const bool ok = problem.newton(w);
  const double floor = 1e-9;
  bool all_spd = ok;
  for (const auto& we : w) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(we);
    if (es.eigenvalues().minCoeff() < floor) all_spd = false;
  }
  if (!all_spd) {
    if (!ok) w.assign(c.size(), Eigen::Matrix3d::Identity() * scale);
    problem.projected_descent(w, floor);
  }
  if (!std::isfinite(problem.objective(w))) throw RecoveryError("factor recovery did not converge");

  std::vector<Factor> out;
  for (std::size_t e = 0; e < c.size(); ++e) {
    const auto [a, b] = topology.edges[e];
    const Eigen::Matrix3d info = m[e] * w[e] * m[e];
    const Eigen::Matrix3d info_sym = 0.5 * (info + info.transpose());
    if (!is_spd(info_sym)) throw RecoveryError("recovered information is not SPD");
    Factor f;
    f.from = a;
    f.to = b;
    f.measurement = between(clique.linearization.at(a), clique.linearization.at(b));
    f.information = info_sym;
    f.kind = FactorKind::recovered;
    out.push_back(f);
  }
  return out;
}

CliqueFactor dense_clique_factor(const EliminationClique& clique) {
  const std::size_t m = clique.kept.size();
  if (m < 2) throw RecoveryError("dense factor needs at least two vertices");
  const auto pos = positions(clique.kept);
  MatrixXd jrel = MatrixXd::Zero(blk(m - 1), blk(m));
  CliqueFactor f;
  f.vertices = clique.kept;
  const Pose2& x0 = clique.linearization.at(clique.kept[0]);
  for (std::size_t k = 1; k < m; ++k) {
    const Pose2& xk = clique.linearization.at(clique.kept[k]);
    const Pose2 z = between(x0, xk);
    f.relative.push_back(z);
    const auto ej = error_jacobians(z, x0, xk);
    jrel.block<3, 3>(blk(k - 1), 0) = ej.ja;
    jrel.block<3, 3>(blk(k - 1), blk(k)) = ej.jb;
  }
  const MatrixXd u = non_gauge_basis(clique);
  const MatrixXd ju = jrel * u;  // square and invertible
  const MatrixXd p = sym(u.transpose() * clique.target_information * u);
  const Eigen::PartialPivLU<MatrixXd> lu(ju);
  const MatrixXd ju_inv = lu.inverse();
  f.information = sym(ju_inv.transpose() * p * ju_inv);
  return f;
}

Eigen::MatrixXd implied_information(const EliminationClique& clique, const std::vector<Factor>& factors) {
  const auto pos = positions(clique.kept);
  MatrixXd q = MatrixXd::Zero(blk(clique.kept.size()), blk(clique.kept.size()));
  for (const auto& f : factors) {
    const MatrixXd j = edge_jacobian(clique, pos, f.from, f.to);
    q += j.transpose() * f.information * j;
  }
  return q;
}

double kl_divergence(const EliminationClique& clique, const Eigen::MatrixXd& approx_information) {
  if (clique.kept.size() < 2) return 0;
  const MatrixXd u = non_gauge_basis(clique);
  const MatrixXd p = sym(u.transpose() * clique.target_information * u);
  const MatrixXd q = sym(u.transpose() * approx_information * u);
  Eigen::LLT<MatrixXd> lp(p), lq(q);
  if (lp.info() != Eigen::Success) throw RecoveryError("target information is degenerate beyond the gauge");
  if (lq.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  const double d = static_cast<double>(p.rows());
  const double trace = lp.solve(q).trace();  // tr(Q Sigma_P)
  const double logdet_p = 2 * lp.matrixLLT().diagonal().array().log().sum();
  const double logdet_q = 2 * lq.matrixLLT().diagonal().array().log().sum();
  return std::max(0.0, 0.5 * (trace - (logdet_q - logdet_p) - d));
}

MarginalizationReport marginalize_region(PoseGraph& graph, RegionId region, const MarginalizationOptions& options) {
  MarginalizationReport report;
  report.region_id = region;

  std::vector<VertexId> members;
  std::set<VertexId> anchors;
  for (const auto& [id, kf] : graph.keyframes()) {
    if (kf.region_id != region) continue;
    members.push_back(id);
    if (kf.is_anchor) anchors.insert(id);
  }
  if (members.empty()) throw GraphError("region " + std::to_string(region) + " has no keyframes");
  if (anchors.empty()) {
    std::set<VertexId> forced;
    // root and latest are never removed, so they count against the anchor budget
    if (graph.keyframe(graph.root()).region_id == region) forced.insert(graph.root());
    if (graph.keyframe(graph.latest()).region_id == region) forced.insert(graph.latest());
    anchors = select_anchors(graph, region, options.anchors_per_region, options.anchor_distance_weight, forced);
  }
  report.anchors.assign(anchors.begin(), anchors.end());

  std::set<VertexId> removed;
  for (VertexId v : members)
    if (!anchors.count(v) && v != graph.latest() && v != graph.root()) removed.insert(v);
  if (removed.empty()) return report;

  // Eliminate each connected component of the removed set separately.
  std::vector<std::set<VertexId>> components;
  {
    std::map<VertexId, std::vector<VertexId>> adj;
    for (const auto& f : graph.factors())
      if (removed.count(f.from) && removed.count(f.to)) {
        adj[f.from].push_back(f.to);
        adj[f.to].push_back(f.from);
      }
    for (const auto& c : graph.clique_factors())
      for (VertexId a : c.vertices)
        for (VertexId b : c.vertices)
          if (a != b && removed.count(a) && removed.count(b)) adj[a].push_back(b);
    std::set<VertexId> seen;
    for (VertexId start : removed) {
      if (seen.count(start)) continue;
      std::set<VertexId> comp{start};
      std::deque<VertexId> queue{start};
      seen.insert(start);
      while (!queue.empty()) {
        const VertexId v = queue.front();
        queue.pop_front();
        for (VertexId n : adj[v])
          if (seen.insert(n).second) {
            comp.insert(n);
            queue.push_back(n);
          }
      }
      components.push_back(std::move(comp));
    }
  }

  std::vector<Factor> recovered;
  std::vector<CliqueFactor> dense;
  for (const auto& comp : components) {
    const EliminationClique clique = schur_marginalize(graph, comp);
    if (clique.kept.size() < 2) continue;
    const RecoveredTopology topo =
        options.topology == TopologyKind::complete ? complete_topology(clique) : chow_liu_topology(clique);
    try {
      auto factors = recover_factors(clique, topo);
      report.kld += kl_divergence(clique, implied_information(clique, factors));
      recovered.insert(recovered.end(), factors.begin(), factors.end());
    } catch (const RecoveryError&) {
      dense.push_back(dense_clique_factor(clique));
      ++report.dense_fallbacks;
    }
  }

  graph.remove_keyframes(removed);
  for (const auto& f : recovered) graph.add_factor(f.from, f.to, f.measurement, f.information, FactorKind::recovered);
  for (auto& c : dense) graph.add_clique_factor(c.vertices, c.relative, c.information);

  report.removed_count = static_cast<int>(removed.size());
  report.recovered_factor_count = static_cast<int>(recovered.size() + dense.size());
  report.removed.assign(removed.begin(), removed.end());
  return report;
}

}  // namespace ralc
