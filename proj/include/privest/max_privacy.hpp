#pragma once

#include <string>
#include <vector>

#include "privest/asup.hpp"
#include "privest/sdp.hpp"

namespace privest {

struct MaxPrivacyOptions {
  bool normalized = false;     // divide each privacy term by tr(G_i P_x G_i')
  bool diagonal_only = false;  // restrict Theta to diagonal entries
  double tol = 1e-8;
  int max_iter = 100;
};

struct MaxPrivacyResult {
  Sanitization sanitization;
  std::vector<double> privacy;   // attained values, re-evaluated exactly
  double objective = 0.0;        // SDP objective at the solution
  SdpSolution::Status status = SdpSolution::Status::max_iter;
  SdpSolution::Residuals kkt;
  std::vector<std::string> warnings;
};

namespace detail {

struct ThetaLayout {
  // Maps each agent to its variable blocks: one matrix block per agent, or
  // per-entry scalar blocks in diagonal mode.
  std::vector<std::vector<int>> agent_blocks;
  int z_block = 0;
  int n_blocks = 0;
};

inline ThetaLayout make_theta_layout(const SystemModel& model,
                                     bool diagonal_only, SdpProblem* p) {
  ThetaLayout layout;
  int next = 0;
  for (int i = 0; i < model.n_agents(); ++i) {
    std::vector<int> blocks;
    if (diagonal_only) {
      for (Index k = 0; k < model.agent_dims[i]; ++k) {
        p->variable_dims.push_back(1);
        blocks.push_back(next++);
      }
    } else {
      p->variable_dims.push_back(model.agent_dims[i]);
      blocks.push_back(next++);
    }
    layout.agent_blocks.push_back(std::move(blocks));
  }
  p->variable_dims.push_back(model.n_params());
  layout.z_block = next++;
  layout.n_blocks = next;
  return layout;
}

// Columns of the LMI congruence operator that pick agent i's noise out of the
// stacked coordinate system: full = base_cols(S_i) for a matrix block, or one
// column per scalar entry in diagonal mode.
inline void add_theta_terms(const Matrix& base_cols, const AgentSlice& sl,
                            const std::vector<int>& blocks, double sign,
                            LmiConstraint* lmi) {
  if (blocks.size() == 1) {
    lmi->terms.push_back(
        {blocks[0], base_cols.middleCols(sl.offset, sl.size), sign});
  } else {
    for (Index k = 0; k < sl.size; ++k)
      lmi->terms.push_back({blocks[k], base_cols.col(sl.offset + k), sign});
  }
}

// Exact perfect-utility constraint U Psi Theta = 0, written as linear rows on
// the per-agent blocks; dependent rows are dropped inside the solver.
inline void add_perfect_utility_rows(const SystemModel& model,
                                     const CrlbFactors& f,
                                     const ThetaLayout& layout, SdpProblem* p) {
  Matrix u_psi = model.U * f.Psi;
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    Matrix local = u_psi.middleCols(sl.offset, sl.size);
    const auto& blocks = layout.agent_blocks[i - 1];
    for (Index r = 0; r < local.rows(); ++r) {
      for (Index c = 0; c < sl.size; ++c) {
        LinearFunctional fn;
        if (blocks.size() == 1) {
          Matrix a = Matrix::Zero(sl.size, sl.size);
          a.col(c) = local.row(r).transpose();
          fn.coeffs[blocks[0]] = symmetrize(a);
        } else {
          fn.coeffs[blocks[c]] = Matrix::Constant(1, 1, local(r, c));
        }
        p->equalities.push_back({fn, 0.0});
      }
    }
  }
}

inline void add_power_budgets(const SystemModel& model,
                              const ThetaLayout& layout,
                              const std::vector<double>& delta, SdpProblem* p) {
  for (int i = 0; i < model.n_agents(); ++i) {
    ScalarConstraint sc;
    sc.greater_equal = false;
    sc.rhs = delta[i];
    const auto& blocks = layout.agent_blocks[i];
    if (blocks.size() == 1) {
      sc.lhs.coeffs[blocks[0]] =
          Matrix::Identity(model.agent_dims[i], model.agent_dims[i]);
    } else {
      for (int bk : blocks) sc.lhs.coeffs[bk] = Matrix::Identity(1, 1);
    }
    p->inequalities.push_back(sc);
  }
}

inline void add_objective(const SystemModel& model, const CrlbFactors& f,
                          const ThetaLayout& layout, bool normalized,
                          SdpProblem* p) {
  Matrix coeff = Matrix::Zero(model.n_params(), model.n_params());
  for (int i = 0; i < model.n_agents(); ++i) {
    const Matrix& g = model.G[i];
    if (g.isZero(0.0)) continue;
    double w = 1.0;
    if (normalized) w = 1.0 / (g * f.P_x * g.transpose()).trace();
    coeff += w * g.transpose() * g;
  }
  p->maximize = true;
  p->objective.coeffs[layout.z_block] = symmetrize(coeff);
}

// Interior starting point: agent noise spread over the utility-preserving
// subspace, Z at half the baseline bound.
inline void add_initial_point(const SystemModel& model, const CrlbFactors& f,
                              const ThetaLayout& layout,
                              const std::vector<double>& delta,
                              const Tolerance& tol, SdpProblem* p) {
  Matrix u_psi = model.U * f.Psi;
  std::vector<Matrix> init(layout.n_blocks);
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    OrthonormalBasis nb =
        null_basis(u_psi.middleCols(sl.offset, sl.size), tol);
    Matrix proj = nb.dim() > 0
                      ? Matrix(nb.vectors * nb.vectors.transpose())
                      : Matrix(Matrix::Zero(sl.size, sl.size));
    Matrix theta0 =
        (delta[i - 1] / (2.0 * static_cast<double>(sl.size))) * proj;
    const auto& blocks = layout.agent_blocks[i - 1];
    if (blocks.size() == 1) {
      init[blocks[0]] = theta0;
    } else {
      for (Index k = 0; k < sl.size; ++k)
        init[blocks[k]] = theta0.block(k, k, 1, 1);
    }
  }
  init[layout.z_block] = 0.5 * f.P_x;
  p->initial_point = std::move(init);
}

inline Matrix assemble_theta(const SystemModel& model,
                             const ThetaLayout& layout,
                             const std::vector<Matrix>& blocks) {
  const Index n = model.n_obs();
  Matrix theta = Matrix::Zero(n, n);
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    const auto& bks = layout.agent_blocks[i - 1];
    if (bks.size() == 1) {
      theta.block(sl.offset, sl.offset, sl.size, sl.size) =
          symmetrize(blocks[bks[0]]);
    } else {
      for (Index k = 0; k < sl.size; ++k)
        theta(sl.offset + k, sl.offset + k) = blocks[bks[k]](0, 0);
    }
  }
  return theta;
}

// Restores the exact utility-preserving face: Theta_i <- P_i Theta_i P_i with
// P_i the projector onto Null(U Psi_i). Trace can only shrink, so budgets
// stay satisfied.
inline Matrix project_perfect_utility(const SystemModel& model,
                                      const CrlbFactors& f, Matrix theta,
                                      const Tolerance& tol) {
  Matrix u_psi = model.U * f.Psi;
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    OrthonormalBasis nb =
        null_basis(u_psi.middleCols(sl.offset, sl.size), tol);
    Matrix blk = theta.block(sl.offset, sl.offset, sl.size, sl.size);
    if (nb.dim() == 0) {
      theta.block(sl.offset, sl.offset, sl.size, sl.size).setZero();
      continue;
    }
    Matrix proj = nb.vectors * nb.vectors.transpose();
    theta.block(sl.offset, sl.offset, sl.size, sl.size) =
        clamp_psd(proj * blk * proj);
  }
  return theta;
}

inline MaxPrivacyResult finish_max_privacy(const SystemModel& model,
                                           const CrlbFactors& f,
                                           const ThetaLayout& layout,
                                           const SdpProblem& p,
                                           const MaxPrivacyOptions& opt,
                                           const Tolerance& tol,
                                           std::vector<std::string> warnings) {
  SdpSolution sol = solve_sdp(p, opt.tol, opt.max_iter);
  MaxPrivacyResult out;
  out.status = sol.status;
  out.kkt = sol.kkt;
  out.objective = sol.objective_value;
  out.warnings = std::move(warnings);
  Matrix theta = assemble_theta(model, layout, sol.blocks);
  theta = project_perfect_utility(model, f, theta, tol);
  out.sanitization = Sanitization(
      Matrix::Identity(model.n_obs(), model.n_obs()), theta, model.agent_dims,
      tol);
  auto rep = tradeoff_report(model, out.sanitization, tol);
  out.privacy = rep.privacy;
  return out;
}

}  // namespace detail

/// Maximum total privacy achievable with perfect utility under per-agent
/// noise power budgets, no prior information. The bound constraint on the
/// auxiliary variable is rewritten through the coordinates K = inv([H, Hbar])
/// so it becomes linear in (Theta, Z).
inline MaxPrivacyResult max_privacy_no_prior(const SystemModel& model,
                                             const std::vector<double>& delta,
                                             const MaxPrivacyOptions& opt = {},
                                             const Tolerance& tol = {}) {
  if (model.has_prior())
    fail(ErrorKind::invalid_input, "max_privacy_no_prior: model has a prior");
  if (static_cast<Index>(delta.size()) != model.n_agents())
    fail(ErrorKind::invalid_input, "max_privacy_no_prior: one budget per agent");
  for (double d : delta)
    if (!(d > 0.0))
      fail(ErrorKind::invalid_input, "max_privacy_no_prior: budgets must be > 0");
  const Index n = model.n_obs();
  const Index l = model.n_params();
  if (rank_tol(model.H, tol) < l)
    fail(ErrorKind::invalid_input,
         "max_privacy_no_prior: H must have full column rank");

  CrlbFactors f = crlb_factors(model, tol);
  std::vector<std::string> warnings;

  Matrix h_bar = null_basis(model.H.transpose(), tol).vectors;  // N x (N-L)
  Matrix basis(n, n);
  basis.leftCols(l) = model.H;
  basis.rightCols(n - l) = h_bar;
  {
    Eigen::BDCSVD<Matrix> svd(basis);
    const double cond = svd.singularValues()(0) /
                        std::max(svd.singularValues()(n - 1), 1e-300);
    if (cond > 1e10) {
      // Re-orthonormalize the complement against H and retry the conditioning.
      Matrix corrected =
          h_bar - model.H * solve_spd(model.H.transpose() * model.H,
                                      model.H.transpose() * h_bar,
                                      "max_privacy_no_prior");
      Eigen::HouseholderQR<Matrix> qr(corrected);
      h_bar = Matrix(qr.householderQ()).leftCols(n - l);
      basis.rightCols(n - l) = h_bar;
      warnings.push_back("[H, Hbar] ill-conditioned; complement re-orthonormalized");
    }
  }
  Matrix k = Eigen::PartialPivLU<Matrix>(basis).inverse();
  Matrix k1 = k.topRows(l);

  SdpProblem p;
  detail::ThetaLayout layout =
      detail::make_theta_layout(model, opt.diagonal_only, &p);

  LmiConstraint lmi;
  lmi.F0 = symmetrize(k * model.R * k.transpose());
  for (int i = 1; i <= model.n_agents(); ++i)
    detail::add_theta_terms(k, agent_slice(model, i),
                            layout.agent_blocks[i - 1], 1.0, &lmi);
  Matrix ez = Matrix::Zero(n, l);
  ez.topRows(l) = Matrix::Identity(l, l);
  lmi.terms.push_back({layout.z_block, ez, -1.0});
  p.lmis.push_back(std::move(lmi));

  detail::add_objective(model, f, layout, opt.normalized, &p);
  detail::add_perfect_utility_rows(model, f, layout, &p);
  detail::add_power_budgets(model, layout, delta, &p);
  detail::add_initial_point(model, f, layout, delta, tol, &p);
  return detail::finish_max_privacy(model, f, layout, p, opt, tol,
                                    std::move(warnings));
}

/// Prior-information variant: the bound constraint linearizes directly as
/// [[P0 - Z, P0 H'], [H P0, inv(Phi) + Theta]] >= 0.
inline MaxPrivacyResult max_privacy_with_prior(const SystemModel& model,
                                               const std::vector<double>& delta,
                                               const MaxPrivacyOptions& opt = {},
                                               const Tolerance& tol = {}) {
  if (!model.has_prior())
    fail(ErrorKind::invalid_input, "max_privacy_with_prior: model has no prior");
  if (static_cast<Index>(delta.size()) != model.n_agents())
    fail(ErrorKind::invalid_input,
         "max_privacy_with_prior: one budget per agent");
  for (double d : delta)
    if (!(d > 0.0))
      fail(ErrorKind::invalid_input,
           "max_privacy_with_prior: budgets must be > 0");
  const Index n = model.n_obs();
  const Index l = model.n_params();

  CrlbFactors f = crlb_factors(model, tol);
  SdpProblem p;
  detail::ThetaLayout layout =
      detail::make_theta_layout(model, opt.diagonal_only, &p);

  LmiConstraint lmi;
  lmi.F0 = Matrix::Zero(l + n, l + n);
  lmi.F0.topLeftCorner(l, l) = f.P0;
  lmi.F0.topRightCorner(l, n) = f.P0 * model.H.transpose();
  lmi.F0.bottomLeftCorner(n, l) = model.H * f.P0;
  lmi.F0.bottomRightCorner(n, n) =
      symmetrize(model.H * f.P0 * model.H.transpose() + model.R);
  Matrix theta_cols = Matrix::Zero(l + n, n);
  theta_cols.bottomRows(n) = Matrix::Identity(n, n);
  for (int i = 1; i <= model.n_agents(); ++i)
    detail::add_theta_terms(theta_cols, agent_slice(model, i),
                            layout.agent_blocks[i - 1], 1.0, &lmi);
  Matrix ez = Matrix::Zero(l + n, l);
  ez.topRows(l) = Matrix::Identity(l, l);
  lmi.terms.push_back({layout.z_block, ez, -1.0});
  p.lmis.push_back(std::move(lmi));

  detail::add_objective(model, f, layout, opt.normalized, &p);
  detail::add_perfect_utility_rows(model, f, layout, &p);
  detail::add_power_budgets(model, layout, delta, &p);
  detail::add_initial_point(model, f, layout, delta, tol, &p);
  return detail::finish_max_privacy(model, f, layout, p, opt, tol, {});
}

inline MaxPrivacyResult max_privacy(const SystemModel& model,
                                    const std::vector<double>& delta,
                                    const MaxPrivacyOptions& opt = {},
                                    const Tolerance& tol = {}) {
  return model.has_prior() ? max_privacy_with_prior(model, delta, opt, tol)
                           : max_privacy_no_prior(model, delta, opt, tol);
}

}  // namespace privest
