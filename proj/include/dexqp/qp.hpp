#pragma once

/**
 * @file
 * @brief Dense strictly convex QP solver with warm starting.
 *
 * Solves
 *
 *   min ½ xᵀHx + gᵀx   s.t.  Ax ≤ b
 *
 * with a dual active-set method (Goldfarb-Idnani) on a Cholesky factor of H. Working-set
 * changes update the factors J = L⁻ᵀQ and R with Givens rotations, O(n²) per change.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dexqp {

struct QpProblem
{
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;

  Eigen::Index n() const { return g.size(); }
  Eigen::Index m() const { return b.size(); }
  double objective(const Eigen::VectorXd & x) const { return 0.5 * x.dot(H * x) + g.dot(x); }
};

enum class QpStatus { Solved, Infeasible, IterationLimit };

inline const char * to_string(QpStatus s)
{
  switch (s) {
    case QpStatus::Solved: return "solved";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::IterationLimit: return "iteration-limit";
  }
  return "unknown";
}

struct QpSolution
{
  Eigen::VectorXd x;
  /// Sorted constraint indices held with equality at x.
  std::vector<std::size_t> active_set;
  /// Multipliers, one per row of A; zero off the active set.
  Eigen::VectorXd dual;
  /// max(stationarity, primal violation, complementarity), unscaled.
  double kkt_residual = 0.0;
  /// Working-set additions and removals after initialization.
  std::size_t iterations = 0;
  QpStatus status = QpStatus::Solved;
  /// Infeasible only: y ≥ 0 with Aᵀy = 0 and bᵀy < 0, normalized to max(y) = 1.
  Eigen::VectorXd certificate;
};

/// H is not positive definite or the problem dimensions disagree.
class QpError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Problem magnitude used to scale the KKT tolerance.
inline double qp_scale(const QpProblem & p)
{
  double s = 1.0;
  if (p.H.size()) { s = std::max(s, p.H.cwiseAbs().maxCoeff()); }
  if (p.g.size()) { s = std::max(s, p.g.cwiseAbs().maxCoeff()); }
  if (p.A.size()) { s = std::max(s, p.A.cwiseAbs().maxCoeff()); }
  if (p.b.size()) { s = std::max(s, p.b.cwiseAbs().maxCoeff()); }
  return s;
}

struct KktResiduals
{
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, primal, complementarity}); }
};

inline KktResiduals kkt_residuals(const QpProblem & p, const Eigen::VectorXd & x, const Eigen::VectorXd & dual)
{
  KktResiduals r;
  const Eigen::VectorXd grad = p.H * x + p.g + p.A.transpose() * dual;
  if (grad.size()) { r.stationarity = grad.cwiseAbs().maxCoeff(); }
  if (p.m() > 0) {
    const Eigen::VectorXd slack = p.A * x - p.b;
    r.primal = std::max(0.0, slack.maxCoeff());
    r.complementarity = dual.cwiseProduct(slack).cwiseAbs().maxCoeff();
  }
  return r;
}

namespace detail {

/**
 * Working state of the dual method. Constraints are held in the "n ≥ d" form with n = −a,
 * d = −b so the multipliers match the Ax ≤ b convention directly.
 */
class DualActiveSet
{
public:
  explicit DualActiveSet(const QpProblem & p) : p_(p), n_(p.n()), m_(p.m())
  {
    if (p.H.rows() != n_ || p.H.cols() != n_ || p.A.cols() != n_ || p.A.rows() != m_) {
      throw QpError("qp: inconsistent problem dimensions");
    }
    const double hscale = n_ ? std::max(1.0, p.H.cwiseAbs().maxCoeff()) : 1.0;
    if (n_ && (p.H - p.H.transpose()).cwiseAbs().maxCoeff() > 1e-12 * hscale) {
      throw QpError("qp: H is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(p.H);
    if (llt.info() != Eigen::Success) { throw QpError("qp: H is not positive definite"); }
    if (n_ && llt.matrixLLT().diagonal().minCoeff() <= 1e-14 * std::sqrt(hscale)) {
      throw QpError("qp: H is not positive definite");
    }
    row_norm_ = p.A.rowwise().norm();
    u_ = Eigen::VectorXd::Zero(m_);
    x_ = llt.solve(-p.g);
    llt_ = std::move(llt);
  }

  /// Seeds the working set from a hint; rows dependent on earlier ones are skipped.
  void seed(std::span<const std::size_t> hint)
  {
    if (hint.empty()) { return; }
    ensure_factor();
    for (std::size_t i : hint) {
      if (i >= static_cast<std::size_t>(m_)) { throw QpError("qp: warm-start hint index out of range"); }
      if (std::find(active_.begin(), active_.end(), i) != active_.end()) { continue; }
      append_if_independent(i);
    }
    // drop the most negative multiplier until the equality solution is dual feasible
    for (;;) {
      Eigen::VectorXd ua;
      x_ = equality_solution(ua);
      Eigen::Index worst = -1;
      double worst_val = 0.0;
      for (Eigen::Index k = 0; k < ua.size(); ++k) {
        if (ua[k] < worst_val) {
          worst_val = ua[k];
          worst = k;
        }
      }
      u_.setZero();
      for (std::size_t k = 0; k < active_.size(); ++k) { u_[active_[k]] = ua[static_cast<Eigen::Index>(k)]; }
      if (worst < 0) { break; }
      u_[active_[static_cast<std::size_t>(worst)]] = 0.0;
      remove(worst);
      ++changes_;
    }
  }

  QpSolution run()
  {
    const std::size_t limit = 10 * static_cast<std::size_t>(n_ + m_);
    QpSolution sol;
    for (;;) {
      const Eigen::Index p = most_violated();
      if (p < 0) {
        sol.status = QpStatus::Solved;
        break;
      }
      if (!add_constraint(p, limit, sol)) { break; }
    }
    finalize(sol);
    return sol;
  }

private:
  Eigen::VectorXd normal(std::size_t i) const { return -p_.A.row(static_cast<Eigen::Index>(i)).transpose(); }
  double rhs(std::size_t i) const { return -p_.b[static_cast<Eigen::Index>(i)]; }

  /// J = L⁻ᵀ is only needed once a constraint enters; most control steps never get there.
  void ensure_factor()
  {
    if (factored_) { return; }
    J_ = llt_.matrixU().solve(Eigen::MatrixXd::Identity(n_, n_));
    R_ = Eigen::MatrixXd::Zero(n_, n_);
    factored_ = true;
  }

  Eigen::Index q() const { return static_cast<Eigen::Index>(active_.size()); }
  auto upper_r() const { return R_.topLeftCorner(q(), q()).triangularView<Eigen::Upper>(); }

  static void rotate(Eigen::Ref<Eigen::VectorXd> a, Eigen::Ref<Eigen::VectorXd> b, double c, double s)
  {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const double ai = a[i];
      a[i] = c * ai + s * b[i];
      b[i] = c * b[i] - s * ai;
    }
  }

  /// Appends row i to the working set. Givens rotations of J's trailing columns keep
  /// Jᵀ N = [R; 0] for the active normals N.
  void append(std::size_t i) { append(i, J_.transpose() * normal(i)); }

  void append_if_independent(std::size_t i)
  {
    Eigen::VectorXd d = J_.transpose() * normal(i);
    const double full = d.norm();
    if (full > 0.0 && d.tail(n_ - q()).norm() > 1e-10 * full) { append(i, std::move(d)); }
  }

  void append(std::size_t i, Eigen::VectorXd d)
  {
    const Eigen::Index k = q();
    for (Eigen::Index j = n_ - 1; j > k; --j) {
      if (d[j] == 0.0) { continue; }
      const double h = std::hypot(d[j - 1], d[j]);
      const double c = d[j - 1] / h;
      const double sn = d[j] / h;
      d[j - 1] = h;
      d[j] = 0.0;
      rotate(J_.col(j - 1), J_.col(j), c, sn);
    }
    R_.col(k).head(k + 1) = d.head(k + 1);
    active_.push_back(i);
  }

  /// Removes working-set position k and restores R to triangular form.
  void remove(Eigen::Index k)
  {
    const Eigen::Index qq = q();
    for (Eigen::Index c = k; c + 1 < qq; ++c) { R_.col(c).head(qq) = R_.col(c + 1).head(qq); }
    R_.col(qq - 1).setZero();
    for (Eigen::Index j = k; j + 1 < qq; ++j) {
      const double a = R_(j, j);
      const double b = R_(j + 1, j);
      if (b == 0.0) { continue; }
      const double h = std::hypot(a, b);
      const double c = a / h;
      const double sn = b / h;
      for (Eigen::Index col = j; col + 1 < qq; ++col) {
        const double rj = R_(j, col);
        R_(j, col) = c * rj + sn * R_(j + 1, col);
        R_(j + 1, col) = c * R_(j + 1, col) - sn * rj;
      }
      R_(j + 1, j) = 0.0;
      rotate(J_.col(j), J_.col(j + 1), c, sn);
    }
    R_.row(qq - 1).setZero();
    active_.erase(active_.begin() + k);
  }

  /// Fraction of n (in the H⁻¹ metric) outside the span of the working set.
  bool independent(const Eigen::VectorXd & nvec) const
  {
    const Eigen::VectorXd w = J_.transpose() * nvec;
    const double full = w.norm();
    if (full == 0.0) { return false; }
    return w.tail(n_ - q()).norm() > 1e-10 * full;
  }

  /// Minimizer with the working set held as equalities, via x = J y with y₁ = R⁻ᵀ d.
  Eigen::VectorXd equality_solution(Eigen::VectorXd & ua) const
  {
    const Eigen::Index k = q();
    Eigen::VectorXd da(k);
    for (Eigen::Index i = 0; i < k; ++i) { da[i] = rhs(active_[static_cast<std::size_t>(i)]); }
    const Eigen::VectorXd y1 = R_.topLeftCorner(k, k).transpose().triangularView<Eigen::Lower>().solve(da);
    const Eigen::VectorXd jg = J_.transpose() * p_.g;
    ua = upper_r().solve(y1 + jg.head(k));
    return J_.leftCols(k) * y1 - J_.rightCols(n_ - k) * jg.tail(n_ - k);
  }

  double violation_tol(std::size_t i) const
  {
    return 1e-12 * (1.0 + std::abs(p_.b[static_cast<Eigen::Index>(i)]) + row_norm_[static_cast<Eigen::Index>(i)] * x_.norm());
  }

  /// Largest normalized violation among inactive rows, lowest index on ties; -1 if none.
  Eigen::Index most_violated() const
  {
    Eigen::Index best = -1;
    double best_val = 0.0;
    std::vector<bool> in_set(static_cast<std::size_t>(m_), false);
    for (std::size_t i : active_) { in_set[i] = true; }
    const Eigen::VectorXd slack = p_.A * x_ - p_.b;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (in_set[static_cast<std::size_t>(i)]) { continue; }
      const double s = slack[i];
      if (s <= violation_tol(static_cast<std::size_t>(i))) { continue; }
      const double scaled = s / std::max(row_norm_[i], 1e-300);
      if (scaled > best_val) {
        best_val = scaled;
        best = i;
      }
    }
    return best;
  }

  /// Runs the inner loop for violated row p. Returns false when the solve must stop.
  bool add_constraint(Eigen::Index p, std::size_t limit, QpSolution & sol)
  {
    const auto pi = static_cast<std::size_t>(p);
    ensure_factor();
    const Eigen::VectorXd np = normal(pi);
    double up = 0.0;
    for (;;) {
      if (changes_ >= limit) {
        sol.status = QpStatus::IterationLimit;
        return false;
      }
      const auto q = static_cast<Eigen::Index>(active_.size());
      const Eigen::VectorXd w = J_.transpose() * np;
      const Eigen::VectorXd z = J_.rightCols(n_ - q) * w.tail(n_ - q);
      Eigen::VectorXd r(q);
      if (q > 0) { r = upper_r().solve(w.head(q)); }

      const double inf = std::numeric_limits<double>::infinity();
      double t1 = inf;
      Eigen::Index drop = -1;
      const double rtol = 1e-14 * (1.0 + (q ? r.cwiseAbs().maxCoeff() : 0.0));
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r[k] > rtol) {
          const double ratio = u_[static_cast<Eigen::Index>(active_[static_cast<std::size_t>(k)])] / r[k];
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      const double full = w.norm();
      const bool dependent = full == 0.0 || w.tail(n_ - q).norm() <= 1e-10 * full;
      const double slack = np.dot(x_) - rhs(pi);  // < 0 while violated
      double t2 = inf;
      if (!dependent) { t2 = std::max(0.0, -slack / z.dot(np)); }

      const double t = std::min(t1, t2);
      if (t == inf) {
        sol.status = QpStatus::Infeasible;
        sol.certificate = Eigen::VectorXd::Zero(m_);
        sol.certificate[p] = 1.0;
        for (Eigen::Index k = 0; k < q; ++k) {
          sol.certificate[static_cast<Eigen::Index>(active_[static_cast<std::size_t>(k)])] = std::max(0.0, -r[k]);
        }
        sol.certificate /= sol.certificate.maxCoeff();
        return false;
      }

      if (!dependent) { x_ += t * z; }
      for (Eigen::Index k = 0; k < q; ++k) { u_[static_cast<Eigen::Index>(active_[static_cast<std::size_t>(k)])] -= t * r[k]; }
      up += t;

      if (t == t2) {
        u_[p] = up;
        append(pi);
        ++changes_;
        return true;
      }
      u_[static_cast<Eigen::Index>(active_[static_cast<std::size_t>(drop)])] = 0.0;
      remove(drop);
      ++changes_;
    }
  }

  void finalize(QpSolution & sol)
  {
    if (sol.status == QpStatus::Solved && !active_.empty()) {
      // re-solve the final working set directly to shed accumulated step error
      Eigen::VectorXd ua;
      const Eigen::VectorXd x = equality_solution(ua);
      if (ua.minCoeff() >= 0.0) {
        x_ = x;
        for (std::size_t k = 0; k < active_.size(); ++k) { u_[static_cast<Eigen::Index>(active_[k])] = ua[static_cast<Eigen::Index>(k)]; }
      }
    }
    sol.x = x_;
    sol.dual = u_;
    sol.active_set = active_;
    std::sort(sol.active_set.begin(), sol.active_set.end());
    sol.iterations = changes_;
    sol.kkt_residual = kkt_residuals(p_, x_, u_).max();
  }

  const QpProblem & p_;
  Eigen::Index n_;
  Eigen::Index m_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool factored_ = false;
  Eigen::VectorXd row_norm_;
  /// Upper triangle of the leading q x q block is R.
  Eigen::MatrixXd R_;
  Eigen::MatrixXd J_;
  Eigen::VectorXd x_;
  Eigen::VectorXd u_;
  std::vector<std::size_t> active_;
  std::size_t changes_ = 0;
};

}  // namespace detail

/// Cold solve. Throws QpError for non-PD H or inconsistent dimensions.
inline QpSolution solve(const QpProblem & p)
{
  detail::DualActiveSet state(p);
  return state.run();
}

/**
 * @brief Solve starting from a guessed active set.
 *
 * Hint rows are added in the given order (linearly dependent ones skipped); rows with negative
 * multipliers on the resulting equality problem are then dropped, most negative first. The
 * result satisfies the same contract as solve(); only `iterations` differs.
 */
inline QpSolution warm_start_solve(const QpProblem & p, std::span<const std::size_t> hint)
{
  detail::DualActiveSet state(p);
  state.seed(hint);
  return state.run();
}

/// Debug dump with row-major matrices.
inline nlohmann::json qp_to_json(const QpProblem & p)
{
  auto rows = [](const Eigen::MatrixXd & M) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      nlohmann::json r = nlohmann::json::array();
      for (Eigen::Index j = 0; j < M.cols(); ++j) { r.push_back(M(i, j)); }
      out.push_back(std::move(r));
    }
    return out;
  };
  auto vec = [](const Eigen::VectorXd & v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"H", rows(p.H)}, {"g", vec(p.g)}, {"A", rows(p.A)}, {"b", vec(p.b)}};
}

inline QpProblem qp_from_json(const nlohmann::json & doc)
{
  auto vec = [](const nlohmann::json & j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  auto mat = [](const nlohmann::json & j, Eigen::Index cols) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(j.size()), cols);
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      const auto r = j[static_cast<std::size_t>(i)].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(r.size()) != cols) { throw QpError("qp dump: ragged matrix row"); }
      for (Eigen::Index k = 0; k < cols; ++k) { M(i, k) = r[static_cast<std::size_t>(k)]; }
    }
    return M;
  };
  QpProblem p;
  p.g = vec(doc.at("g"));
  p.b = vec(doc.at("b"));
  p.H = mat(doc.at("H"), p.n());
  p.A = mat(doc.at("A"), p.n());
  return p;
}

}  // namespace dexqp
