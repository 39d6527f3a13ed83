#pragma once

#include <limits>
#include <vector>

#include "privest/sanitize.hpp"

namespace privest {

/// Factors of the perturbed-CRLB decomposition. With no prior, Phi is the
/// degenerate residual matrix of rank N - L; with a prior, Psi and inv(Phi)
/// play the roles of Kalman gain and innovation covariance.
struct CrlbFactors {
  Matrix P_x;        // L x L baseline CRLB
  Matrix Psi;        // L x N
  Matrix Phi;        // N x N symmetric
  bool with_prior = false;
  Matrix P0;         // L x L, prior case only
};

/// Perturbed CRLB evaluation result. `unbounded` marks the case where the
/// sanitized measurements carry no information about some direction of x and
/// no prior exists, so the bound is infinite (a legitimate outcome, not an
/// error).
struct PerturbedCrlb {
  Matrix matrix;
  bool unbounded = false;
};

/// Utility/privacy summary of one sanitization against one model.
struct TradeoffReport {
  double utility = 0.0;
  std::vector<double> privacy;
  Matrix P_x;
  PerturbedCrlb P_tilde;
  std::vector<double> eps_max;
};

namespace detail {

inline Matrix information_matrix(const SystemModel& model) {
  Matrix rinv_h = solve_spd(model.R, model.H, "baseline_crlb");
  return symmetrize(model.J0 + model.H.transpose() * rinv_h);
}

inline bool invert_information(const Matrix& info, Matrix* out,
                               const Tolerance& tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(info);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() <= tol.rank_tol_for(info.rows(), info.cols()) * lmax)
    return false;
  Vector inv = es.eigenvalues().cwiseInverse();
  *out = symmetrize(es.eigenvectors() * inv.asDiagonal() *
                    es.eigenvectors().transpose());
  return true;
}

}  // namespace detail

inline Matrix baseline_crlb(const SystemModel& model, const Tolerance& tol = {}) {
  Matrix info = detail::information_matrix(model);
  Matrix p_x;
  if (!detail::invert_information(info, &p_x, tol))
    fail(ErrorKind::model_invalid,
         "baseline_crlb: information matrix singular (rank-deficient H with no prior)");
  return p_x;
}

inline CrlbFactors crlb_factors(const SystemModel& model,
                                const Tolerance& tol = {}) {
  CrlbFactors f;
  f.P_x = baseline_crlb(model, tol);
  f.with_prior = model.has_prior();
  if (f.with_prior) {
    f.P0 = inverse_spd(model.J0, "crlb_factors");
    Matrix innov = symmetrize(model.H * f.P0 * model.H.transpose() + model.R);
    f.Phi = symmetrize(inverse_spd(innov, "crlb_factors"));
    f.Psi = f.P0 * model.H.transpose() * f.Phi;
  } else {
    Matrix rinv_h = solve_spd(model.R, model.H, "crlb_factors");  // R^-1 H
    f.Psi = f.P_x * rinv_h.transpose();
    Matrix rinv = inverse_spd(model.R, "crlb_factors");
    f.Phi = symmetrize(rinv - rinv_h * f.P_x * rinv_h.transpose());
  }
  return f;
}

/// Perturbed CRLB from the definition: inv(J0 + H'C'(CRC' + Theta)^-1 CH).
inline PerturbedCrlb perturbed_crlb(const SystemModel& model,
                                    const Sanitization& s,
                                    const Tolerance& tol = {}) {
  if (s.agent_dims != model.agent_dims)
    fail(ErrorKind::invalid_input, "perturbed_crlb: agent partition mismatch");
  Matrix noise = symmetrize(s.C * model.R * s.C.transpose() + s.Theta);
  Eigen::SelfAdjointEigenSolver<Matrix> es(noise);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() <=
      tol.rank_tol_for(noise.rows(), noise.cols()) * std::max(lmax, 1e-300))
    fail(ErrorKind::invalid_input,
         "perturbed_crlb: CRC' + Theta singular (degenerate sanitization)");
  Matrix ch = s.C * model.H;
  Matrix solved = es.eigenvectors() *
                  es.eigenvalues().cwiseInverse().asDiagonal() *
                  es.eigenvectors().transpose() * ch;
  Matrix info = symmetrize(model.J0 + ch.transpose() * solved);
  PerturbedCrlb out;
  if (!detail::invert_information(info, &out.matrix, tol)) {
    if (model.has_prior())
      fail(ErrorKind::solver_failure,
           "perturbed_crlb: information matrix singular despite prior");
    out.unbounded = true;
  }
  return out;
}

/// Perturbed CRLB via the additive decomposition P_x + Psi (I + Theta Phi)^-1
/// Theta Psi' (compression fixed to the identity).
inline Matrix perturbed_crlb_decomposed(const SystemModel& model,
                                        const Matrix& theta,
                                        const Tolerance& tol = {}) {
  CrlbFactors f = crlb_factors(model, tol);
  const Index n = model.n_obs();
  if (theta.rows() != n || theta.cols() != n)
    fail(ErrorKind::invalid_input, "perturbed_crlb_decomposed: Theta size mismatch");
  Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(n, n) + theta * f.Phi);
  Matrix middle = lu.solve(theta);
  Matrix p_tilde = symmetrize(f.P_x + f.Psi * middle * f.Psi.transpose());
  const double resid =
      ((Matrix::Identity(n, n) + theta * f.Phi) * middle - theta).norm();
  if (!(resid <= 1e-6 * std::max(1.0, theta.norm())))
    fail(ErrorKind::solver_failure,
         "perturbed_crlb_decomposed: (I + Theta Phi) solve failed");
  return p_tilde;
}

namespace detail {

inline double utility_from(const SystemModel& model, const Matrix& p_x,
                           const PerturbedCrlb& pt) {
  const double denom = (model.U * p_x * model.U.transpose()).trace();
  if (!(denom > 0.0))
    fail(ErrorKind::invalid_input, "utility: public map U is degenerate (zero)");
  if (pt.unbounded) return -std::numeric_limits<double>::infinity();
  return 1.0 - (model.U * pt.matrix * model.U.transpose()).trace() / denom;
}

inline double privacy_from(const SystemModel& model, const Matrix& p_x,
                           const PerturbedCrlb& pt, int agent_index) {
  const Matrix& g = model.G.at(agent_index - 1);
  if (g.isZero(0.0)) return 0.0;
  if (pt.unbounded) return std::numeric_limits<double>::infinity();
  const double denom = (g * p_x * g.transpose()).trace();
  return (g * pt.matrix * g.transpose()).trace() / denom - 1.0;
}

}  // namespace detail

inline double utility(const SystemModel& model, const Sanitization& s,
                      const Tolerance& tol = {}) {
  return detail::utility_from(model, baseline_crlb(model, tol),
                              perturbed_crlb(model, s, tol));
}

inline double privacy(const SystemModel& model, const Sanitization& s,
                      int agent_index, const Tolerance& tol = {}) {
  return detail::privacy_from(model, baseline_crlb(model, tol),
                              perturbed_crlb(model, s, tol), agent_index);
}

/// Supremum of attainable privacy for agent i: finite only when a prior
/// exists (the prior alone already reveals g_i), infinite with no prior,
/// zero for a zero private map.
inline double eps_max(const SystemModel& model, int agent_index,
                      const Tolerance& tol = {}) {
  const Matrix& g = model.G.at(agent_index - 1);
  if (g.isZero(0.0)) return 0.0;
  if (!model.has_prior()) return std::numeric_limits<double>::infinity();
  Matrix p0 = inverse_spd(model.J0, "eps_max");
  Matrix p_x = baseline_crlb(model, tol);
  return (g * p0 * g.transpose()).trace() /
             (g * p_x * g.transpose()).trace() -
         1.0;
}

inline TradeoffReport tradeoff_report(const SystemModel& model,
                                      const Sanitization& s,
                                      const Tolerance& tol = {}) {
  TradeoffReport rep;
  rep.P_x = baseline_crlb(model, tol);
  rep.P_tilde = perturbed_crlb(model, s, tol);
  rep.utility = detail::utility_from(model, rep.P_x, rep.P_tilde);
  for (int i = 1; i <= model.n_agents(); ++i) {
    rep.privacy.push_back(detail::privacy_from(model, rep.P_x, rep.P_tilde, i));
    rep.eps_max.push_back(eps_max(model, i, tol));
  }
  return rep;
}

}  // namespace privest
