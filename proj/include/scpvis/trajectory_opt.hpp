#pragma once

#include "scpvis/corridor.hpp"
#include "scpvis/nlp_solver.hpp"
#include "scpvis/pointcloud_map.hpp"
#include "scpvis/routing.hpp"
#include "scpvis/star_convex.hpp"
#include "scpvis/trajectory.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace scpvis {

struct TrajOptConfig {
  double rho = 150.0;
  double v_max = 4.0;
  double a_max = 6.0;
  int eta = 10;
  // a piece gets max(eta, initial length / sample_spacing) samples
  double sample_spacing = 0.25;
  double alpha = 100.0;
  double d_min = 0.1;
  double lambda_vis = 1e4;
  double lambda_safe = 1e4;
  double lambda_dyn = 1e4;
  // extra LSE margin used while optimizing, on top of d_min
  double visibility_slack = 0.05;
  int scp_subdivision = 2;
  int poly_subdivision = 1;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-4;
  int solver_memory = 8;
  // stop a round when the cost moved less than stall_delta (relative) over
  // the last stall_past iterations
  int stall_past = 10;
  double stall_delta = 1e-4;
  double check_dt = 0.01;
  int escalation_rounds = 3;
  double sight_clearance = 0.1;

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::input, what); };
    if (!(rho > 0 && v_max > 0 && a_max > 0 && alpha > 0 && d_min > 0))
      bad("rho, v_max, a_max, alpha and d_min must be positive");
    if (!(lambda_vis > 0 && lambda_safe > 0 && lambda_dyn > 0))
      bad("penalty weights must be positive");
    if (eta < 4) bad("eta must be at least 4");
    if (!(sample_spacing > 0)) bad("sample_spacing must be positive");
    if (scp_subdivision < 1 || poly_subdivision < 1) bad("subdivision factors must be >= 1");
    if (!(check_dt > 0)) bad("check_dt must be positive");
    if (visibility_slack < 0 || sight_clearance < 0 || escalation_rounds < 0)
      bad("slack, clearance and escalation rounds must be non-negative");
  }
};

/// How the corridor is cut into spline pieces, plus the initial guess.
struct PiecePlan {
  std::vector<int> element;  // corridor element of each piece
  std::vector<double> tau;   // minimum duration of each piece
  std::vector<int> eta;      // quadrature intervals of each piece
  Points initial_points;     // M - 1 interior points
  std::vector<double> initial_times;
};

namespace detail {

/// Rest-to-rest time over distance `len` with a trapezoidal speed profile.
inline double trapezoid_time(double len, double v, double a) {
  if (len <= 0.0) return 0.0;
  if (len >= v * v / a) return len / v + v / a;
  return 2.0 * std::sqrt(len / a);
}

}  // namespace detail

/**
 * One piece per polytope element and `scp_subdivision` pieces per SCP element
 * (split at the refined waypoint when the factor is 2). An SCP element's dwell
 * is shared evenly by its pieces, so the element's total time exceeds the
 * dwell whatever the free variables are.
 */
inline PiecePlan plan_pieces(const Corridor& corr, const WaypointSet& ws, const TrajOptConfig& cfg) {
  const std::size_t ne = corr.elements.size();
  if (ne == 0) throw Error(ErrorKind::input, "empty corridor");
  if (corr.junctions.size() + 1 != ne)
    throw Error(ErrorKind::input, "corridor needs one junction between consecutive elements");
  PiecePlan plan;
  Points knots{corr.start};
  for (std::size_t e = 0; e < ne; ++e) {
    const CorridorElement& el = corr.elements[e];
    const Vec3 a = e == 0 ? corr.start : corr.junctions[e - 1];
    const Vec3 b = e + 1 == ne ? corr.goal : corr.junctions[e];
    Points inner;
    if (el.type == ElementType::scp) {
      if (el.route_index < 0 || el.route_index >= static_cast<int>(ws.waypoints.size()))
        throw Error(ErrorKind::input, "SCP element without a refined waypoint");
      const Vec3& w = ws.waypoints[static_cast<std::size_t>(el.route_index)];
      const int k = cfg.scp_subdivision;
      // split evenly along a -> w -> b
      for (int s = 1; s < k; ++s) {
        const double f = 2.0 * s / k;
        inner.push_back(f <= 1.0 ? a + f * (w - a) : w + (f - 1.0) * (b - w));
      }
      for (int s = 0; s < k; ++s) {
        plan.element.push_back(static_cast<int>(e));
        plan.tau.push_back(el.dwell / k);
      }
    } else {
      const int k = cfg.poly_subdivision;
      for (int s = 1; s < k; ++s) inner.push_back(a + (b - a) * (static_cast<double>(s) / k));
      for (int s = 0; s < k; ++s) {
        plan.element.push_back(static_cast<int>(e));
        plan.tau.push_back(0.0);
      }
    }
    for (const auto& p : inner) knots.push_back(p);
    knots.push_back(b);
  }
  // knots: start, interior..., goal
  for (std::size_t i = 1; i + 1 < knots.size(); ++i) plan.initial_points.push_back(knots[i]);
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double len = (knots[i + 1] - knots[i]).norm();
    const double t = detail::trapezoid_time(len, 0.5 * cfg.v_max, cfg.a_max);
    plan.initial_times.push_back(std::max(t, 0.1) + plan.tau[i]);
    plan.eta.push_back(std::max(cfg.eta, static_cast<int>(std::ceil(len / cfg.sample_spacing))));
  }
  return plan;
}

/**
 * Penalized objective over the interior points and the time variables xi,
 * with T_j = exp(xi_j) + tau_j:
 *   jerk + rho * sum T + sampled polytope, visibility and dynamics penalties.
 * Each penalty is summed over the closed grid t = s T / eta_j, s = 0..eta_j,
 * with weight T / eta_j; eta_j is fixed per piece from its initial length so
 * long pieces are not sampled more sparsely than short ones.
 */
class TrajectoryCost {
 public:
  TrajectoryCost(const Corridor& corr, const std::vector<const StarPolytope*>& scps,
                 PiecePlan plan, const Boundary& bc, const TrajOptConfig& cfg)
      : corr_(corr), scps_(scps), plan_(std::move(plan)), bc_(bc), cfg_(cfg), base_eta_(cfg.eta) {
    m_ = static_cast<int>(plan_.element.size());
    for (int e : plan_.element) {
      const CorridorElement& el = corr_.elements[static_cast<std::size_t>(e)];
      if (el.type == ElementType::scp &&
          (el.route_index < 0 || el.route_index >= static_cast<int>(scps_.size()) ||
           !scps_[static_cast<std::size_t>(el.route_index)]))
        throw Error(ErrorKind::input, "SCP element without a star-convex polytope");
    }
  }

  int piece_count() const { return m_; }
  int dimension() const { return 3 * (m_ - 1) + m_; }
  const PiecePlan& plan() const { return plan_; }
  TrajOptConfig& config() { return cfg_; }
  const TrajOptConfig& config() const { return cfg_; }

  Eigen::VectorXd initial_point() const {
    Eigen::VectorXd x(dimension());
    for (int i = 0; i + 1 < m_; ++i) x.segment<3>(3 * i) = plan_.initial_points[static_cast<std::size_t>(i)];
    for (int j = 0; j < m_; ++j) {
      const double free = plan_.initial_times[static_cast<std::size_t>(j)] - plan_.tau[static_cast<std::size_t>(j)];
      x[3 * (m_ - 1) + j] = std::log(std::max(free, 0.1));
    }
    return x;
  }

  Points points(const Eigen::VectorXd& x) const {
    Points q;
    for (int i = 0; i + 1 < m_; ++i) q.push_back(x.segment<3>(3 * i));
    return q;
  }

  std::vector<double> times(const Eigen::VectorXd& x) const {
    std::vector<double> t(static_cast<std::size_t>(m_));
    for (int j = 0; j < m_; ++j)
      t[static_cast<std::size_t>(j)] = std::exp(x[3 * (m_ - 1) + j]) + plan_.tau[static_cast<std::size_t>(j)];
    return t;
  }

  SplineTrajectory trajectory(const Eigen::VectorXd& x) const {
    MincoJerk mj;
    mj.setup(bc_, points(x), times(x));
    SplineTrajectory t = mj.trajectory();
    t.piece_to_element = plan_.element;
    return t;
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const std::vector<double> t = times(x);
    MincoJerk mj;
    try {
      mj.setup(bc_, points(x), t);
    } catch (const Error&) {
      // only reachable when exp(xi) overflows; reject the step
      grad.setZero(dimension());
      return std::numeric_limits<double>::infinity();
    }
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(6 * m_, 3);
    Eigen::VectorXd dt = Eigen::VectorXd::Zero(m_);
    double cost = mj.jerk_cost(dc, dt);
    for (int j = 0; j < m_; ++j) {
      cost += cfg_.rho * t[static_cast<std::size_t>(j)];
      dt[j] += cfg_.rho;
      cost += piece_penalty(mj, j, dc, dt);
    }
    Eigen::MatrixXd dq;
    mj.propagate(dc, dt, dq);
    grad.resize(dimension());
    for (int i = 0; i + 1 < m_; ++i) grad.segment<3>(3 * i) = dq.row(i).transpose();
    for (int j = 0; j < m_; ++j) grad[3 * (m_ - 1) + j] = dt[j] * std::exp(x[3 * (m_ - 1) + j]);
    return cost;
  }

  Objective objective() const {
    return [this](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return (*this)(x, g); };
  }

 private:
  double piece_penalty(const MincoJerk& mj, int j, Eigen::MatrixXd& dc, Eigen::VectorXd& dt) const {
    const CorridorElement& el = corr_.elements[static_cast<std::size_t>(plan_.element[static_cast<std::size_t>(j)])];
    const StarPolytope* scp =
        el.type == ElementType::scp ? scps_[static_cast<std::size_t>(el.route_index)] : nullptr;
    const PieceCoeffs c = mj.piece(j);
    const double big_t = mj.times()[static_cast<std::size_t>(j)];
    const int eta = plan_.eta[static_cast<std::size_t>(j)] * cfg_.eta / base_eta_;
    const double w = big_t / eta;
    const double vm2 = cfg_.v_max * cfg_.v_max, am2 = cfg_.a_max * cfg_.a_max;
    const double vis_margin = cfg_.d_min + cfg_.visibility_slack;
    double total = 0.0;
    for (int s = 0; s <= eta; ++s) {
      const double frac = static_cast<double>(s) / eta;
      const double t = frac * big_t;
      const auto b0 = detail::basis(0, t), b1 = detail::basis(1, t), b2 = detail::basis(2, t),
                 b3 = detail::basis(3, t);
      const Vec3 p = (b0 * c).transpose(), v = (b1 * c).transpose(), a = (b2 * c).transpose(),
                 jk = (b3 * c).transpose();
      double pen = 0.0;
      Vec3 gp = Vec3::Zero(), gv = Vec3::Zero(), ga = Vec3::Zero();
      if (scp) {
        const Violation viol = visibility_violation(*scp, p, vis_margin, cfg_.alpha, cfg_.lambda_vis);
        pen += viol.value;
        gp += viol.gradient;
      } else {
        const Eigen::VectorXd dist = el.poly.normals * p - el.poly.offsets;
        for (Eigen::Index k = 0; k < dist.size(); ++k) {
          const double e = dist[k] + cfg_.d_min;
          if (e <= 0.0) continue;
          pen += cfg_.lambda_safe * e * e * e;
          gp += 3.0 * cfg_.lambda_safe * e * e * el.poly.normals.row(k).transpose();
        }
      }
      const double ev = v.squaredNorm() - vm2;
      if (ev > 0.0) {
        pen += cfg_.lambda_dyn * ev * ev * ev;
        gv += 6.0 * cfg_.lambda_dyn * ev * ev * v;
      }
      const double ea = a.squaredNorm() - am2;
      if (ea > 0.0) {
        pen += cfg_.lambda_dyn * ea * ea * ea;
        ga += 6.0 * cfg_.lambda_dyn * ea * ea * a;
      }
      if (pen == 0.0) continue;
      total += w * pen;
      for (int k = 0; k < 6; ++k)
        dc.row(6 * j + k) += w * (b0[k] * gp + b1[k] * gv + b2[k] * ga).transpose();
      dt[j] += pen / eta + w * frac * (gp.dot(v) + gv.dot(a) + ga.dot(jk));
    }
    return total;
  }

  const Corridor& corr_;
  std::vector<const StarPolytope*> scps_;
  PiecePlan plan_;
  Boundary bc_;
  TrajOptConfig cfg_;
  int base_eta_;  // plan_.eta was derived from this; escalation scales both
  int m_ = 0;
};

/// Outcome of the sampled acceptance check of a trajectory.
struct PostCheck {
  double worst_poly_margin = std::numeric_limits<double>::infinity();  // min of b - n.x
  double max_speed = 0.0;
  double max_acc = 0.0;
  double worst_lse_hat = -std::numeric_limits<double>::infinity();
  int outside_poly = 0;
  int outside_scp = 0;
  int sight_blocked = 0;
  int dwell_short = 0;
  bool containment_ok = true;
  bool dynamics_ok = true;
  bool visibility_ok = true;
  bool sight_ok = true;

  bool ok() const { return containment_ok && dynamics_ok && visibility_ok && sight_ok && dwell_short == 0; }

  std::string describe() const {
    std::ostringstream os;
    const char* sep = "";
    if (!containment_ok) {
      os << sep << outside_poly << " samples leave their polytope (worst margin "
         << worst_poly_margin << ")";
      sep = "; ";
    }
    if (!dynamics_ok) {
      os << sep << "max speed " << max_speed << ", max acceleration " << max_acc;
      sep = "; ";
    }
    if (!visibility_ok) {
      os << sep << outside_scp << " samples leave their SCP (worst LSE gap " << worst_lse_hat << ")";
      sep = "; ";
    }
    if (!sight_ok) {
      os << sep << sight_blocked << " samples without a clear sight line";
      sep = "; ";
    }
    if (dwell_short) os << sep << dwell_short << " SCP elements below their dwell time";
    return os.str();
  }
};

/**
 * Samples each piece every cfg.check_dt (plus its end) and checks corridor
 * containment, the dynamic limits, SCP membership and, when `sight_map` is
 * given, a clear segment from every SCP sample to the spot.
 */
inline PostCheck post_check(const SplineTrajectory& traj, const Corridor& corr,
                            const std::vector<const StarPolytope*>& scps, const TrajOptConfig& cfg,
                            const std::vector<double>& tau, const PointCloudMap* sight_map = nullptr) {
  PostCheck r;
  std::vector<double> element_time(corr.elements.size(), 0.0), element_tau(corr.elements.size(), 0.0);
  for (std::size_t j = 0; j < traj.piece_count(); ++j) {
    const auto e = static_cast<std::size_t>(traj.piece_to_element[j]);
    const CorridorElement& el = corr.elements[e];
    const StarPolytope* scp = el.type == ElementType::scp ? scps[static_cast<std::size_t>(el.route_index)] : nullptr;
    const double big_t = traj.durations[j];
    element_time[e] += big_t;
    element_tau[e] += tau[j];
    const auto n = static_cast<long>(std::floor(big_t / cfg.check_dt));
    const bool end_extra = static_cast<double>(n) * cfg.check_dt < big_t;
    for (long k = 0; k <= n + (end_extra ? 1 : 0); ++k) {
      const double t = std::min(static_cast<double>(k) * cfg.check_dt, big_t);
      const Vec3 p = evaluate_piece(traj, j, t, 0);
      r.max_speed = std::max(r.max_speed, evaluate_piece(traj, j, t, 1).norm());
      r.max_acc = std::max(r.max_acc, evaluate_piece(traj, j, t, 2).norm());
      if (scp) {
        const Violation v = visibility_violation(*scp, p, cfg.d_min, cfg.alpha, 0.0);
        r.worst_lse_hat = std::max(r.worst_lse_hat, v.lse_hat);
        if (!point_in_scp(*scp, p) || v.lse_hat > 1e-3) ++r.outside_scp;
        if (sight_map && !segment_clear(*sight_map, p, scp->center, cfg.sight_clearance))
          ++r.sight_blocked;
      } else {
        const double margin = -el.poly.max_violation(p);
        r.worst_poly_margin = std::min(r.worst_poly_margin, margin);
        if (margin < -1e-3) ++r.outside_poly;
      }
    }
  }
  for (std::size_t e = 0; e < corr.elements.size(); ++e)
    if (corr.elements[e].type == ElementType::scp && !(element_time[e] > element_tau[e]))
      ++r.dwell_short;
  r.containment_ok = r.outside_poly == 0;
  r.dynamics_ok = r.max_speed <= cfg.v_max * 1.01 && r.max_acc <= cfg.a_max * 1.01;
  r.visibility_ok = r.outside_scp == 0;
  r.sight_ok = r.sight_blocked == 0;
  return r;
}

struct TrajOptResult {
  SplineTrajectory trajectory;
  PostCheck check;
  double cost = 0.0;
  int iterations = 0;
  int escalations = 0;
  SolveStatus status = SolveStatus::converged;
  std::vector<double> tau;  // per piece
};

/**
 * Minimizes the penalized cost from the corridor's initial guess and checks
 * the result. A failed check multiplies the weights of the violated terms by
 * ten, doubles eta and re-solves from the last iterate, at most
 * cfg.escalation_rounds times. Sight-line failures also widen the
 * visibility slack.
 */
inline TrajOptResult optimize_trajectory(const Corridor& corr,
                                         const std::vector<const StarPolytope*>& scps,
                                         const WaypointSet& ws, const Boundary& bc,
                                         const TrajOptConfig& config,
                                         const PointCloudMap* sight_map = nullptr) {
  config.validate();
  TrajectoryCost cost(corr, scps, plan_pieces(corr, ws, config), bc, config);
  Eigen::VectorXd x = cost.initial_point();
  TrajOptResult out;
  out.tau = cost.plan().tau;
  for (int round = 0;; ++round) {
    SolveOptions so;
    so.max_iterations = cost.config().max_iterations;
    so.gradient_tolerance = cost.config().gradient_tolerance;
    so.memory = cost.config().solver_memory;
    so.stall_past = cost.config().stall_past;
    so.stall_delta = cost.config().stall_delta;
    const SolveResult res = minimize(cost.objective(), x, so);
    x = res.argmin;
    out.cost = res.value;
    out.iterations += res.iterations;
    out.status = res.status;
    out.trajectory = cost.trajectory(x);
    out.check = post_check(out.trajectory, corr, scps, cost.config(), out.tau, sight_map);
    out.escalations = round;
    if (out.check.ok()) return out;
    if (round >= cost.config().escalation_rounds) break;
    TrajOptConfig& c = cost.config();
    if (!out.check.containment_ok) c.lambda_safe *= 10.0;
    if (!out.check.dynamics_ok) c.lambda_dyn *= 10.0;
    if (!out.check.visibility_ok || !out.check.sight_ok) c.lambda_vis *= 10.0;
    if (!out.check.sight_ok) c.visibility_slack += 0.05;
    c.eta *= 2;
  }
  throw Error(ErrorKind::optimization_failure,
              "trajectory rejected after " + std::to_string(out.escalations) +
                  " escalations: " + out.check.describe());
}

}  // namespace scpvis
