#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <iterator>
#include <system_error>
#include <fstream>
#include <string>
#include <vector>

namespace scpvis {

/// Position, velocity and acceleration at one instant.
struct State {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 a = Vec3::Zero();
};

struct Boundary {
  State start;
  State goal;
};

/// Piece coefficients: row k holds the t^k coefficient of x, y, z.
using PieceCoeffs = Eigen::Matrix<double, 6, 3>;

struct SplineTrajectory {
  std::vector<PieceCoeffs> coeffs;
  std::vector<double> durations;
  std::vector<int> piece_to_element;  // corridor element owning each piece

  std::size_t piece_count() const { return durations.size(); }
  double total_time() const {
    double s = 0.0;
    for (double t : durations) s += t;
    return s;
  }
};

namespace detail {

/// Row of d^k/dt^k [1 t t^2 t^3 t^4 t^5].
inline Eigen::Matrix<double, 1, 6> basis(int k, double t) {
  Eigen::Matrix<double, 1, 6> b = Eigen::Matrix<double, 1, 6>::Zero();
  for (int m = k; m < 6; ++m) {
    double f = 1.0;
    for (int j = 0; j < k; ++j) f *= m - j;
    b[m] = f * std::pow(t, m - k);
  }
  return b;
}

/// Square band matrix with in-place LU (no pivoting). Fill-in stays inside
/// the band, which is what makes this cheap for the spline system.
class BandedSystem {
 public:
  void reset(int n, int lower, int upper) {
    n_ = n;
    lo_ = lower;
    up_ = upper;
    data_.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(lower + upper + 1), 0.0);
  }

  double& operator()(int i, int j) { return data_[index(i, j)]; }
  double operator()(int i, int j) const { return data_[index(i, j)]; }

  /// Returns false on a (numerically) zero pivot.
  bool factor() {
    for (int k = 0; k < n_; ++k) {
      const double piv = (*this)(k, k);
      if (!std::isfinite(piv) || std::abs(piv) < 1e-300) return false;
      const int i_max = std::min(k + lo_, n_ - 1);
      const int j_max = std::min(k + up_, n_ - 1);
      for (int i = k + 1; i <= i_max; ++i)
        if ((*this)(i, k) != 0.0) (*this)(i, k) /= piv;
      for (int j = k + 1; j <= j_max; ++j) {
        const double v = (*this)(k, j);
        if (v == 0.0) continue;
        for (int i = k + 1; i <= i_max; ++i)
          if ((*this)(i, k) != 0.0) (*this)(i, j) -= (*this)(i, k) * v;
      }
    }
    return true;
  }

  /// Solves A X = B in place (after factor()).
  template <class M>
  void solve(M& b) const {
    for (int j = 0; j < n_; ++j) {
      const int i_max = std::min(j + lo_, n_ - 1);
      for (int i = j + 1; i <= i_max; ++i)
        if ((*this)(i, j) != 0.0) b.row(i) -= (*this)(i, j) * b.row(j);
    }
    for (int j = n_ - 1; j >= 0; --j) {
      b.row(j) /= (*this)(j, j);
      const int i_min = std::max(0, j - up_);
      for (int i = i_min; i < j; ++i)
        if ((*this)(i, j) != 0.0) b.row(i) -= (*this)(i, j) * b.row(j);
    }
  }

  /// Solves A^T X = B in place (after factor()).
  template <class M>
  void solve_transposed(M& b) const {
    for (int j = 0; j < n_; ++j) {
      b.row(j) /= (*this)(j, j);
      const int i_max = std::min(j + up_, n_ - 1);
      for (int i = j + 1; i <= i_max; ++i)
        if ((*this)(j, i) != 0.0) b.row(i) -= (*this)(j, i) * b.row(j);
    }
    for (int j = n_ - 1; j >= 0; --j) {
      const int i_min = std::max(0, j - lo_);
      for (int i = i_min; i < j; ++i)
        if ((*this)(j, i) != 0.0) b.row(i) -= (*this)(j, i) * b.row(j);
    }
  }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(up_ + i - j) +
           static_cast<std::size_t>(j) * static_cast<std::size_t>(lo_ + up_ + 1);
  }

  int n_ = 0, lo_ = 0, up_ = 0;
  std::vector<double> data_;
};

}  // namespace detail

/**
 * Minimum-jerk piecewise quintic through fixed interior waypoints.
 *
 * Row layout of the 6M system: start p, v, a; then per joint i the
 * jerk and snap continuity, the waypoint, and p, v, a continuity; finally the
 * goal p, v, a. The optimum is C4 at every joint.
 *
 * propagate() maps a cost gradient w.r.t. the coefficients (plus any explicit
 * duration dependence) onto the waypoints and durations through the adjoint
 * system A^T G = dC.
 */
class MincoJerk {
 public:
  void setup(const Boundary& bc, const Points& waypoints, const std::vector<double>& times) {
    const int m = static_cast<int>(times.size());
    if (m < 1) throw Error(ErrorKind::construction, "spline needs at least one piece");
    if (static_cast<int>(waypoints.size()) != m - 1)
      throw Error(ErrorKind::construction,
                  "spline with " + std::to_string(m) + " pieces needs " + std::to_string(m - 1) +
                      " interior waypoints, got " + std::to_string(waypoints.size()));
    for (int i = 0; i < m; ++i)
      if (!(times[static_cast<std::size_t>(i)] > 0.0) || !std::isfinite(times[static_cast<std::size_t>(i)]))
        throw Error(ErrorKind::construction,
                    "piece " + std::to_string(i) + " has non-positive duration");
    m_ = m;
    times_ = times;
    const int n = 6 * m;
    a_.reset(n, 6, 6);
    b_.setZero(n, 3);

    auto put = [&](int row, int piece, int order, double t, double sign) {
      const auto r = detail::basis(order, t);
      for (int k = 0; k < 6; ++k)
        if (r[k] != 0.0) a_(row, 6 * piece + k) += sign * r[k];
    };
    for (int k = 0; k < 3; ++k) put(k, 0, k, 0.0, 1.0);
    b_.row(0) = bc.start.p.transpose();
    b_.row(1) = bc.start.v.transpose();
    b_.row(2) = bc.start.a.transpose();
    for (int i = 0; i + 1 < m; ++i) {
      const int r = 6 * i + 3;
      const double t = times_[static_cast<std::size_t>(i)];
      put(r + 0, i, 3, t, 1.0);
      put(r + 0, i + 1, 3, 0.0, -1.0);
      put(r + 1, i, 4, t, 1.0);
      put(r + 1, i + 1, 4, 0.0, -1.0);
      put(r + 2, i, 0, t, 1.0);
      b_.row(r + 2) = waypoints[static_cast<std::size_t>(i)].transpose();
      for (int k = 0; k < 3; ++k) {
        put(r + 3 + k, i, k, t, 1.0);
        put(r + 3 + k, i + 1, k, 0.0, -1.0);
      }
    }
    const double tl = times_.back();
    for (int k = 0; k < 3; ++k) put(n - 3 + k, m - 1, k, tl, 1.0);
    b_.row(n - 3) = bc.goal.p.transpose();
    b_.row(n - 2) = bc.goal.v.transpose();
    b_.row(n - 1) = bc.goal.a.transpose();

    if (!a_.factor())
      throw Error(ErrorKind::construction, "singular spline system");
    coeffs_ = b_;
    a_.solve(coeffs_);
    if (!coeffs_.allFinite()) throw Error(ErrorKind::construction, "singular spline system");
  }

  int piece_count() const { return m_; }
  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& coefficients() const { return coeffs_; }
  PieceCoeffs piece(int i) const { return coeffs_.block<6, 3>(6 * i, 0); }

  SplineTrajectory trajectory() const {
    SplineTrajectory out;
    out.durations = times_;
    for (int i = 0; i < m_; ++i) out.coeffs.push_back(piece(i));
    out.piece_to_element.assign(static_cast<std::size_t>(m_), -1);
    return out;
  }

  /// Jerk integral and its explicit gradients (added into dc, dt).
  double jerk_cost(Eigen::MatrixXd& dc, Eigen::VectorXd& dt) const {
    double cost = 0.0;
    for (int i = 0; i < m_; ++i) {
      const double t1 = times_[static_cast<std::size_t>(i)];
      const double t2 = t1 * t1, t3 = t2 * t1, t4 = t3 * t1, t5 = t4 * t1;
      const auto c3 = coeffs_.row(6 * i + 3);
      const auto c4 = coeffs_.row(6 * i + 4);
      const auto c5 = coeffs_.row(6 * i + 5);
      const double c33 = c3.squaredNorm(), c34 = c3.dot(c4), c44 = c4.squaredNorm();
      const double c35 = c3.dot(c5), c45 = c4.dot(c5), c55 = c5.squaredNorm();
      cost += 36.0 * c33 * t1 + 144.0 * c34 * t2 + (192.0 * c44 + 240.0 * c35) * t3 +
              720.0 * c45 * t4 + 720.0 * c55 * t5;
      dc.row(6 * i + 3) += 72.0 * c3 * t1 + 144.0 * c4 * t2 + 240.0 * c5 * t3;
      dc.row(6 * i + 4) += 144.0 * c3 * t2 + 384.0 * c4 * t3 + 720.0 * c5 * t4;
      dc.row(6 * i + 5) += 240.0 * c3 * t3 + 720.0 * c4 * t4 + 1440.0 * c5 * t5;
      dt[i] += 36.0 * c33 + 288.0 * c34 * t1 + (576.0 * c44 + 720.0 * c35) * t2 +
               2880.0 * c45 * t3 + 3600.0 * c55 * t4;
    }
    return cost;
  }

  /**
   * Chain rule through the linear system. `dc` is consumed. On return
   * `dq` holds the gradient w.r.t. the interior waypoints and `dt` the total
   * gradient w.r.t. the durations (explicit part must already be in `dt`).
   */
  void propagate(Eigen::MatrixXd& dc, Eigen::VectorXd& dt, Eigen::MatrixXd& dq) const {
    a_.solve_transposed(dc);
    const Eigen::MatrixXd& g = dc;
    dq.resize(std::max(m_ - 1, 0), 3);
    // d(row)/dT for a row evaluating order k of piece i at T_i is order k + 1
    auto deriv = [&](int i, int k) {
      const double t = times_[static_cast<std::size_t>(i)];
      return (detail::basis(k + 1, t) * coeffs_.block<6, 3>(6 * i, 0)).eval();
    };
    for (int i = 0; i + 1 < m_; ++i) {
      const int r = 6 * i + 3;
      dq.row(i) = g.row(r + 2);
      double s = g.row(r + 0).dot(deriv(i, 3)) + g.row(r + 1).dot(deriv(i, 4));
      s +=g.row(r + 2).dot(deriv(i, 0));
      for (int k = 0; k < 3; ++k) s += g.row(r + 3 + k).dot(deriv(i, k));
      dt[i] -= s;
    }
    const int n = 6 * m_;
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += g.row(n - 3 + k).dot(deriv(m_ - 1, k));
    dt[m_ - 1] -= s;
  }

 private:
  int m_ = 0;
  std::vector<double> times_;
  detail::BandedSystem a_;
  Eigen::MatrixXd b_;
  Eigen::MatrixXd coeffs_;
};

inline SplineTrajectory construct_spline(const Points& waypoints, const std::vector<double>& times,
                                         const Boundary& bc) {
  MincoJerk minco;
  minco.setup(bc, waypoints, times);
  return minco.trajectory();
}

/// Derivative of the given order (0..3) at time t in [0, total_time].
inline Vec3 evaluate(const SplineTrajectory& traj, double t, int order = 0) {
  if (order < 0 || order > 3)
    throw Error(ErrorKind::domain, "derivative order " + std::to_string(order) + " not in 0..3");
  const double total = traj.total_time();
  if (traj.durations.empty() || !(t >= 0.0) || t > total)
    throw Error(ErrorKind::domain, "time " + std::to_string(t) + " outside [0, " +
                                       std::to_string(total) + "]");
  std::size_t i = 0;
  double local = t;
  while (i + 1 < traj.durations.size() && local > traj.durations[i]) {
    local -= traj.durations[i];
    ++i;
  }
  local = std::min(local, traj.durations[i]);
  return (detail::basis(order, local) * traj.coeffs[i]).transpose();
}

/// Derivative of the given order at local time t of piece i (no range check).
inline Vec3 evaluate_piece(const SplineTrajectory& traj, std::size_t i, double t, int order) {
  return (detail::basis(order, t) * traj.coeffs[i]).transpose();
}

/// Integral of the squared jerk over the whole trajectory.
inline double jerk_integral(const SplineTrajectory& traj) {
  double cost = 0.0;
  for (std::size_t i = 0; i < traj.piece_count(); ++i) {
    const double t1 = traj.durations[i];
    const double t2 = t1 * t1, t3 = t2 * t1, t4 = t3 * t1, t5 = t4 * t1;
    const auto& c = traj.coeffs[i];
    const auto c3 = c.row(3), c4 = c.row(4), c5 = c.row(5);
    cost += 36.0 * c3.squaredNorm() * t1 + 144.0 * c3.dot(c4) * t2 +
            (192.0 * c4.squaredNorm() + 240.0 * c3.dot(c5)) * t3 + 720.0 * c4.dot(c5) * t4 +
            720.0 * c5.squaredNorm() * t5;
  }
  return cost;
}

struct TrajectorySample {
  double t = 0.0;
  Vec3 p, v, a;
};

/// Uniform samples at step dt; the final instant is always included.
inline std::vector<TrajectorySample> sample_trajectory(const SplineTrajectory& traj, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorKind::input, "sample step must be positive");
  std::vector<TrajectorySample> out;
  const double total = traj.total_time();
  const auto n = static_cast<long>(std::floor(total / dt));
  for (long k = 0; k <= n + 1; ++k) {
    const double t = std::min(static_cast<double>(k) * dt, total);
    if (!out.empty() && t <= out.back().t) break;
    out.push_back({t, evaluate(traj, t, 0), evaluate(traj, t, 1), evaluate(traj, t, 2)});
  }
  return out;
}

inline constexpr const char* kTrajectoryCsvHeader = "t,x,y,z,vx,vy,vz,ax,ay,az";

inline void write_trajectory_csv(const SplineTrajectory& traj, double dt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.precision(17);
  out << kTrajectoryCsvHeader << '\n';
  for (const auto& s : sample_trajectory(traj, dt)) {
    out << s.t;
    for (const Vec3* v : {&s.p, &s.v, &s.a})
      for (int k = 0; k < 3; ++k) out << ',' << (*v)[k];
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

/**
 * Reads the sampled CSV form. Every row needs ten numeric fields and a
 * terminating newline, and times must increase, so a file cut short anywhere
 * is rejected.
 */
inline std::vector<TrajectorySample> read_trajectory_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<TrajectorySample> out;
  std::size_t pos = 0;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": " + why);
  };
  while (pos < text.size()) {
    ++line_no;
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) fail("line is not terminated");
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kTrajectoryCsvHeader) fail("expected header " + std::string(kTrajectoryCsvHeader));
      continue;
    }
    double f[10];
    const char* p = line.data();
    const char* stop = line.data() + line.size();
    for (int k = 0; k < 10; ++k) {
      const auto [next, ec] = std::from_chars(p, stop, f[k]);
      if (ec != std::errc() || !std::isfinite(f[k])) fail("bad number in field " + std::to_string(k + 1));
      p = next;
      if (k < 9) {
        if (p == stop || *p != ',') fail("expected 10 fields");
        ++p;
      }
    }
    if (p != stop) fail("trailing characters");
    if (!out.empty() && !(f[0] > out.back().t)) fail("times must increase");
    out.push_back({f[0], Vec3(f[1], f[2], f[3]), Vec3(f[4], f[5], f[6]), Vec3(f[7], f[8], f[9])});
  }
  if (line_no == 0) throw Error(ErrorKind::parse, path + ": empty file");
  if (out.size() < 2) throw Error(ErrorKind::parse, path + ": need at least two samples");
  return out;
}

inline nlohmann::json trajectory_to_json(const SplineTrajectory& traj) {
  using nlohmann::json;
  json pieces = json::array();
  for (std::size_t i = 0; i < traj.piece_count(); ++i) {
    json axes = json::array();
    for (int a = 0; a < 3; ++a) {
      json c = json::array();
      for (int k = 0; k < 6; ++k) c.push_back(traj.coeffs[i](k, a));
      axes.push_back(c);
    }
    json p = {{"duration", traj.durations[i]}, {"coefficients", axes}};
    if (i < traj.piece_to_element.size()) p["element"] = traj.piece_to_element[i];
    pieces.push_back(p);
  }
  return {{"total_time", traj.total_time()}, {"pieces", pieces}};
}

inline SplineTrajectory trajectory_from_json(const nlohmann::json& j) {
  SplineTrajectory traj;
  try {
    for (const auto& p : j.at("pieces")) {
      const double d = p.at("duration").get<double>();
      if (!(d > 0.0)) throw Error(ErrorKind::parse, "piece duration must be positive");
      PieceCoeffs c;
      const auto& axes = p.at("coefficients");
      if (axes.size() != 3) throw Error(ErrorKind::parse, "piece needs 3 coefficient rows");
      for (int a = 0; a < 3; ++a) {
        if (axes[static_cast<std::size_t>(a)].size() != 6)
          throw Error(ErrorKind::parse, "piece needs 6 coefficients per axis");
        for (int k = 0; k < 6; ++k)
          c(k, a) = axes[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)].get<double>();
      }
      traj.durations.push_back(d);
      traj.coeffs.push_back(c);
      traj.piece_to_element.push_back(p.value("element", -1));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("trajectory json: ") + e.what());
  }
  if (traj.durations.empty()) throw Error(ErrorKind::parse, "trajectory has no pieces");
  return traj;
}

}  // namespace scpvis
