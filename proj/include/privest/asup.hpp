#pragma once

#include <string>
#include <vector>

#include "privest/crlb.hpp"

namespace privest {

/// Diagnostics for one nonzero private map in the no-prior checker.
struct AsupPrivateDiag {
  int private_index = 0;            // 1-based agent owning G_j
  std::vector<int> witnesses;       // agents whose null directions reach G_j
};

/// Diagnostics for one agent in the with-prior checker.
struct AsupAgentResidual {
  int agent_index = 0;
  double residual = 0.0;            // ||U Psi_i H_i P0 G'||_F
  double threshold = 0.0;
};

/// Decision on whether perfect utility can coexist with privacy beyond any
/// threshold below eps_max.
struct AsupVerdict {
  bool achievable = false;
  bool with_prior = false;
  // No-prior only: every agent with a nonzero private map witnesses itself,
  // which is the precondition of the per-agent construction.
  bool per_agent_achievable = false;
  std::vector<AsupPrivateDiag> per_private;     // no-prior case
  std::vector<AsupAgentResidual> residuals;     // with-prior case
  std::vector<Index> xi_ranks;                  // per agent, no-prior case
};

/// Construction output: the mechanism plus the choices that produced it.
struct AsupConstruction {
  Sanitization sanitization;
  std::vector<int> piece_private;     // private map served by each piece
  std::vector<int> piece_agent;       // agent carrying each piece
  std::vector<Vector> piece_direction;
  std::vector<double> piece_lambda;
};

/// Stacked filter whose null space identifies agent-i noise directions that
/// leave the public estimate untouched: rows are U Psi_{:,S_i} over the
/// agent-i diagonal block of Phi.
inline Matrix xi_matrix(const SystemModel& model, int agent_index,
                        const CrlbFactors& f) {
  if (f.with_prior)
    fail(ErrorKind::invalid_input, "xi_matrix: defined for the no-prior case");
  auto sl = agent_slice(model, agent_index);
  Matrix xi(model.U.rows() + sl.size, sl.size);
  xi.topRows(model.U.rows()) =
      model.U * f.Psi.middleCols(sl.offset, sl.size);
  xi.bottomRows(sl.size) = f.Phi.block(sl.offset, sl.offset, sl.size, sl.size);
  return xi;
}

inline Matrix xi_matrix(const SystemModel& model, int agent_index,
                        const Tolerance& tol = {}) {
  if (model.has_prior())
    fail(ErrorKind::invalid_input, "xi_matrix: defined for the no-prior case");
  return xi_matrix(model, agent_index, crlb_factors(model, tol));
}

namespace detail {

inline Matrix stacked_private_map(const SystemModel& model) {
  Index rows = 0;
  for (const auto& g : model.G) rows += g.rows();
  Matrix out(rows, model.n_params());
  Index off = 0;
  for (const auto& g : model.G) {
    out.middleRows(off, g.rows()) = g;
    off += g.rows();
  }
  return out;
}

}  // namespace detail

/// Necessary and sufficient check with no prior: for each nonzero G_j some
/// agent i must have a noise direction in Null(Xi_i) that is visible to
/// G_j Psi_{:,S_i}. Tested in null-space form via projection norms.
inline AsupVerdict check_asup_no_prior(const SystemModel& model,
                                       double rel_tol = 1e-8,
                                       const Tolerance& lin_tol = {}) {
  if (model.has_prior())
    fail(ErrorKind::invalid_input,
         "check_asup_no_prior: model has prior information");
  CrlbFactors f = crlb_factors(model, lin_tol);
  const int s = static_cast<int>(model.n_agents());

  // Rank decisions use the checker tolerance: the factors carry roundoff well
  // above machine epsilon, so structural null directions sit near 1e-14.
  Tolerance rank_cfg = lin_tol;
  rank_cfg.rel_rank_tol = rel_tol;

  std::vector<OrthonormalBasis> null_bases(s);
  AsupVerdict v;
  v.with_prior = false;
  for (int i = 1; i <= s; ++i) {
    Matrix xi = xi_matrix(model, i, f);
    null_bases[i - 1] = null_basis(xi, rank_cfg);
    v.xi_ranks.push_back(rank_tol(xi, rank_cfg));
  }

  auto has_reach = [&](int j, int i) {
    const auto& base = null_bases[i - 1];
    if (base.dim() == 0) return false;  // condition (i) fails
    auto sl = agent_slice(model, i);
    Matrix g_psi = model.G[j - 1] * f.Psi.middleCols(sl.offset, sl.size);
    const double scale = g_psi.norm();
    if (scale == 0.0) return false;
    return (g_psi * base.vectors).norm() > rel_tol * scale;
  };

  v.achievable = true;
  v.per_agent_achievable = true;
  for (int j = 1; j <= s; ++j) {
    if (model.G[j - 1].isZero(0.0)) continue;
    AsupPrivateDiag diag;
    diag.private_index = j;
    for (int i = 1; i <= s; ++i)
      if (has_reach(j, i)) diag.witnesses.push_back(i);
    if (diag.witnesses.empty()) v.achievable = false;
    if (!has_reach(j, j)) v.per_agent_achievable = false;
    v.per_private.push_back(std::move(diag));
  }
  return v;
}

/// Necessary and sufficient check with a positive definite prior: the reduced
/// estimate cross-covariance between public and private parameters must vanish
/// at every agent.
inline AsupVerdict check_asup_with_prior(const SystemModel& model,
                                         double rel_tol = 1e-8,
                                         const Tolerance& lin_tol = {}) {
  if (!model.has_prior())
    fail(ErrorKind::invalid_input,
         "check_asup_with_prior: model lacks prior information");
  CrlbFactors f = crlb_factors(model, lin_tol);
  Matrix g_all = detail::stacked_private_map(model);

  AsupVerdict v;
  v.with_prior = true;
  v.achievable = true;
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    Matrix h_i = model.H.middleRows(sl.offset, sl.size);
    Matrix resid = model.U * f.Psi.middleCols(sl.offset, sl.size) * h_i *
                   f.P0 * g_all.transpose();
    AsupAgentResidual r;
    r.agent_index = i;
    r.residual = resid.norm();
    r.threshold = rel_tol * model.U.norm() * f.Psi.norm() * h_i.norm() *
                  f.P0.norm() * g_all.norm();
    if (r.residual > r.threshold) v.achievable = false;
    v.residuals.push_back(r);
  }
  return v;
}

inline AsupVerdict check_asup(const SystemModel& model, double rel_tol = 1e-8,
                              const Tolerance& lin_tol = {}) {
  return model.has_prior() ? check_asup_with_prior(model, rel_tol, lin_tol)
                           : check_asup_no_prior(model, rel_tol, lin_tol);
}

namespace detail {

// Doubling then bisection for the smallest noise scale meeting the target;
// `satisfied` must be monotone. Returns the satisfying upper endpoint of a
// bracket tightened to 1%.
template <typename Pred>
double scale_search(Pred&& satisfied, double cap, const char* who) {
  if (satisfied(0.0)) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (!satisfied(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > cap)
      fail(ErrorKind::infeasible,
           std::string(who) + ": noise scale cap exceeded before meeting the "
                              "privacy threshold");
  }
  for (int step = 0; step < 20 && hi - lo > 0.01 * hi; ++step) {
    const double mid = 0.5 * (lo + hi);
    (satisfied(mid) ? hi : lo) = mid;
  }
  return hi;
}

}  // namespace detail

/// No-prior sanitization achieving perfect utility with per-map privacy above
/// the requested thresholds. One rank-one noise piece is placed per nonzero
/// private map on a witnessing agent; pieces accumulate into Theta.
inline AsupConstruction construct_no_prior(const SystemModel& model,
                                           const PrivacyRequest& eps,
                                           double lambda_cap = 1e12,
                                           double rel_tol = 1e-8,
                                           const Tolerance& lin_tol = {}) {
  eps.validate(model.n_agents());
  if (model.has_prior())
    fail(ErrorKind::invalid_input, "construct_no_prior: model has a prior");
  CrlbFactors f = crlb_factors(model, lin_tol);
  AsupVerdict verdict = check_asup_no_prior(model, rel_tol, lin_tol);

  const Index n = model.n_obs();
  AsupConstruction out;
  out.sanitization = identity_sanitization(model);
  Matrix& theta = out.sanitization.Theta;

  for (const auto& diag : verdict.per_private) {
    const int j = diag.private_index;
    const double target = eps.eps[j - 1];
    if (diag.witnesses.empty()) {
      if (target > 0.0)
        fail(ErrorKind::infeasible,
             "construct_no_prior: no agent can serve private map " +
                 std::to_string(j));
      continue;
    }
    const int i = diag.witnesses.front();
    auto sl = agent_slice(model, i);
    Tolerance rank_cfg = lin_tol;
    rank_cfg.rel_rank_tol = rel_tol;
    OrthonormalBasis base = null_basis(xi_matrix(model, i, f), rank_cfg);
    Matrix g_psi = model.G[j - 1] * f.Psi.middleCols(sl.offset, sl.size);

    // Deterministic tie-break: the null direction with the largest private
    // visibility gives the best-conditioned privacy gain.
    Index best = 0;
    (g_psi * base.vectors).colwise().norm().maxCoeff(&best);
    Vector v = base.vectors.col(best);

    Matrix piece = Matrix::Zero(n, n);
    piece.block(sl.offset, sl.offset, sl.size, sl.size) = v * v.transpose();

    auto privacy_at = [&](double lam) {
      Matrix cand = theta + lam * piece;
      return detail::privacy_from(
          model, f.P_x,
          perturbed_crlb(model,
                         Sanitization(Matrix::Identity(n, n), cand,
                                      model.agent_dims, lin_tol),
                         lin_tol),
          j);
    };
    double lam;
    if (target > 0.0) {
      lam = detail::scale_search(
          [&](double l) { return privacy_at(l) >= target; }, lambda_cap,
          "construct_no_prior");
    } else {
      lam = 1.0;  // any valid piece works for a zero threshold
    }
    theta += lam * piece;
    out.piece_private.push_back(j);
    out.piece_agent.push_back(i);
    out.piece_direction.push_back(v);
    out.piece_lambda.push_back(lam);
  }

  // Joint re-verification of the assembled mechanism.
  auto rep = tradeoff_report(model, out.sanitization, lin_tol);
  if (!(std::abs(rep.utility) <= 1e-9))
    fail(ErrorKind::solver_failure,
         "construct_no_prior: utility not preserved by the construction");
  for (int j = 1; j <= model.n_agents(); ++j)
    if (rep.privacy[j - 1] < eps.eps[j - 1])
      fail(ErrorKind::infeasible,
           "construct_no_prior: joint verification failed for private map " +
               std::to_string(j));
  return out;
}

/// With-prior sanitization: each agent's noise lives on the row space of
/// Xi_i = G P0 H_i', which is orthogonal to the public directions whenever
/// the achievability condition holds. A common scale is raised until every
/// threshold (all strictly below eps_max) is verified directly.
inline AsupConstruction construct_with_prior(const SystemModel& model,
                                             const PrivacyRequest& eps,
                                             double rel_tol = 1e-8,
                                             const Tolerance& lin_tol = {}) {
  eps.validate(model.n_agents());
  if (!model.has_prior())
    fail(ErrorKind::invalid_input, "construct_with_prior: model has no prior");
  AsupVerdict verdict = check_asup_with_prior(model, rel_tol, lin_tol);
  if (!verdict.achievable)
    fail(ErrorKind::infeasible,
         "construct_with_prior: achievability condition violated");
  for (int i = 1; i <= model.n_agents(); ++i) {
    const double cap = eps_max(model, i, lin_tol);
    if (eps.eps[i - 1] >= cap && eps.eps[i - 1] > 0.0)
      fail(ErrorKind::infeasible,
           "construct_with_prior: threshold for agent " + std::to_string(i) +
               " at or above eps_max");
  }

  CrlbFactors f = crlb_factors(model, lin_tol);
  Matrix g_all = detail::stacked_private_map(model);
  const Index n = model.n_obs();

  Matrix directions = Matrix::Zero(n, n);  // sum of W_i W_i' projectors
  AsupConstruction out;
  for (int i = 1; i <= model.n_agents(); ++i) {
    auto sl = agent_slice(model, i);
    Matrix xi = g_all * f.P0 *
                model.H.middleRows(sl.offset, sl.size).transpose();
    OrthonormalBasis w = row_basis(xi, lin_tol);
    if (w.dim() > 0)
      directions.block(sl.offset, sl.offset, sl.size, sl.size) =
          w.vectors * w.vectors.transpose();
    out.piece_agent.push_back(i);
    out.piece_private.push_back(i);
    out.piece_lambda.push_back(0.0);
  }

  auto all_satisfied = [&](double lam) {
    Sanitization s(Matrix::Identity(n, n), Matrix(lam * directions),
                   model.agent_dims, lin_tol);
    auto pt = perturbed_crlb(model, s, lin_tol);
    for (int i = 1; i <= model.n_agents(); ++i)
      if (detail::privacy_from(model, f.P_x, pt, i) < eps.eps[i - 1])
        return false;
    return true;
  };
  const double lam =
      detail::scale_search(all_satisfied, 1e14, "construct_with_prior");
  for (auto& l : out.piece_lambda) l = lam;
  out.sanitization = Sanitization(Matrix::Identity(n, n),
                                  Matrix(lam * directions), model.agent_dims,
                                  lin_tol);

  auto rep = tradeoff_report(model, out.sanitization, lin_tol);
  if (!(std::abs(rep.utility) <= 1e-9))
    fail(ErrorKind::solver_failure,
         "construct_with_prior: utility not preserved by the construction");
  return out;
}

// ---------------------------------------------------------------------------
// JSON serialization of verdicts and constructions (CLI payloads).

inline nlohmann::json verdict_to_json(const AsupVerdict& v) {
  nlohmann::json j;
  j["achievable"] = v.achievable;
  j["prior"] = v.with_prior;
  if (v.with_prior) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : v.residuals)
      rows.push_back({{"agent", r.agent_index},
                      {"residual", r.residual},
                      {"threshold", r.threshold}});
    j["residuals"] = rows;
  } else {
    j["per_agent_achievable"] = v.per_agent_achievable;
    j["xi_ranks"] = v.xi_ranks;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& d : v.per_private)
      rows.push_back(
          {{"private_map", d.private_index}, {"witnesses", d.witnesses}});
    j["per_private"] = rows;
  }
  return j;
}

inline nlohmann::json construction_to_json(const AsupConstruction& c) {
  nlohmann::json pieces = nlohmann::json::array();
  for (size_t k = 0; k < c.piece_lambda.size(); ++k) {
    nlohmann::json p;
    p["private_map"] = c.piece_private[k];
    p["agent"] = c.piece_agent[k];
    p["lambda"] = c.piece_lambda[k];
    if (k < c.piece_direction.size()) {
      std::vector<double> v(c.piece_direction[k].data(),
                            c.piece_direction[k].data() +
                                c.piece_direction[k].size());
      p["direction"] = v;
    }
    pieces.push_back(std::move(p));
  }
  return pieces;
}

}  // namespace privest
