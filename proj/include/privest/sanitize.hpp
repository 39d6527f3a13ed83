#pragma once

#include <string>
#include <vector>

#include "privest/model.hpp"
#include "privest/rng.hpp"

namespace privest {

namespace detail {

inline double off_block_max(const Matrix& m, const std::vector<Index>& dims) {
  double worst = 0.0;
  Index offset = 0;
  for (Index d : dims) {
    for (Index r = offset; r < offset + d; ++r)
      for (Index c = 0; c < m.cols(); ++c)
        if (c < offset || c >= offset + d)
          worst = std::max(worst, std::abs(m(r, c)));
    offset += d;
  }
  return worst;
}

}  // namespace detail

/// Decentralized sanitization mechanism: per-agent linear compression C_i plus
/// additive Gaussian noise with covariance Theta_i. Both matrices are stored
/// in their padded square N x N block-diagonal form.
struct Sanitization {
  Matrix C;
  Matrix Theta;
  std::vector<Index> agent_dims;

  Sanitization() = default;
  Sanitization(Matrix c, Matrix theta, std::vector<Index> dims,
               const Tolerance& tol = {})
      : C(std::move(c)), Theta(std::move(theta)), agent_dims(std::move(dims)) {
    validate(tol);
  }

  Index n_obs() const { return C.rows(); }

  Matrix c_block(int agent_index_1based) const {
    auto [i, off, sz] = locate(agent_index_1based);
    return C.block(off, off, sz, sz);
  }
  Matrix theta_block(int agent_index_1based) const {
    auto [i, off, sz] = locate(agent_index_1based);
    return Theta.block(off, off, sz, sz);
  }

  void validate(const Tolerance& tol = {}) const {
    Index n = 0;
    for (Index d : agent_dims) {
      if (d <= 0) fail(ErrorKind::model_invalid, "sanitization: bad agent_dims");
      n += d;
    }
    if (C.rows() != n || C.cols() != n)
      fail(ErrorKind::model_invalid, "sanitization: C must be " +
                                         std::to_string(n) + "x" + std::to_string(n));
    if (Theta.rows() != n || Theta.cols() != n)
      fail(ErrorKind::model_invalid, "sanitization: Theta must be " +
                                         std::to_string(n) + "x" + std::to_string(n));
    if (!C.allFinite() || !Theta.allFinite())
      fail(ErrorKind::model_invalid, "sanitization: non-finite entries");
    if (detail::off_block_max(C, agent_dims) > 1e-12)
      fail(ErrorKind::model_invalid, "sanitization: C has off-block entries");
    if (detail::off_block_max(Theta, agent_dims) > 1e-12)
      fail(ErrorKind::model_invalid, "sanitization: Theta has off-block entries");
    if (!is_psd(Theta, tol))
      fail(ErrorKind::model_invalid, "sanitization: Theta not PSD");
  }

 private:
  struct Loc { int i; Index off; Index sz; };
  Loc locate(int agent_index) const {
    if (agent_index < 1 || agent_index > static_cast<int>(agent_dims.size()))
      fail(ErrorKind::invalid_input, "sanitization: agent index out of range");
    Index off = 0;
    for (int k = 0; k + 1 < agent_index; ++k) off += agent_dims[k];
    return {agent_index, off, agent_dims[agent_index - 1]};
  }
};

inline Sanitization identity_sanitization(const SystemModel& model) {
  const Index n = model.n_obs();
  return Sanitization(Matrix::Identity(n, n), Matrix::Zero(n, n),
                      model.agent_dims);
}

/// Rewrites (C, Theta) as (C', Lambda_b) with the same perturbed CRLB, where
/// Lambda_b is diagonal with entries in {0, 1}: eigendecompose each Theta_i as
/// Q diag(lambda) Q^T and fold sqrt(lambda) into the compression,
/// C_i' = Lambda_+^{-1/2} Q^T C_i.
inline Sanitization normalize(const Sanitization& s, const Tolerance& tol = {}) {
  const Index n = s.n_obs();
  Matrix c_out = Matrix::Zero(n, n);
  Matrix theta_out = Matrix::Zero(n, n);
  Index off = 0;
  for (Index d : s.agent_dims) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(
        symmetrize(s.Theta.block(off, off, d, d)));
    Vector lam = es.eigenvalues().cwiseMax(0.0);
    const double zero_cut = tol.psd_tol * std::max(lam.maxCoeff(), 0.0);
    Vector scale(d);
    for (Index k = 0; k < d; ++k) {
      if (lam(k) > zero_cut) {
        theta_out(off + k, off + k) = 1.0;
        scale(k) = 1.0 / std::sqrt(lam(k));
      } else {
        theta_out(off + k, off + k) = 0.0;
        scale(k) = 1.0;
      }
    }
    c_out.block(off, off, d, d) = scale.asDiagonal() *
                                  es.eigenvectors().transpose() *
                                  s.C.block(off, off, d, d);
    off += d;
  }
  return Sanitization(std::move(c_out), std::move(theta_out), s.agent_dims, tol);
}

/// Applies the mechanism to a stacked measurement vector: C y + xi with
/// xi ~ N(0, Theta). The noise factor comes from an eigendecomposition with
/// negative eigenvalues clamped to zero, so PSD-singular Theta is handled.
inline Vector apply(const Sanitization& s, const Vector& y, Rng& rng) {
  const Index n = s.n_obs();
  if (y.size() != n)
    fail(ErrorKind::invalid_input, "apply: measurement length mismatch");
  Vector out = s.C * y;
  if (s.Theta.isZero(0.0)) return out;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s.Theta));
  Vector sd = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Vector z(n);
  for (Index k = 0; k < n; ++k) z(k) = rng.next_normal();
  out += es.eigenvectors() * (sd.asDiagonal() * z);
  return out;
}

/// Pure-noise approximation of a (possibly compressing) mechanism: returns
/// (I, Theta_lambda) whose perturbed CRLB converges to that of (C, Theta) as
/// lambda -> 0. Directions removed by C receive noise that grows without
/// bound, so full suppression is reproduced in the limit.
inline Sanitization boundary_approximation(const Sanitization& s, double lambda,
                                           const Tolerance& tol = {}) {
  if (!(lambda > 0.0))
    fail(ErrorKind::invalid_input, "boundary_approximation: lambda must be > 0");
  const Index n = s.n_obs();
  Matrix theta_out = Matrix::Zero(n, n);
  Index off = 0;
  for (Index d : s.agent_dims) {
    Matrix cb = s.C.block(off, off, d, d);
    Matrix tb = symmetrize(s.Theta.block(off, off, d, d));
    Eigen::BDCSVD<Matrix> svd(cb, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const Index r = detail::rank_from_singular_values(sv, tol.rank_tol_for(d, d));
    const double s_scale = r > 0 ? sv(0) : 1.0;

    Matrix theta_eff = tb;
    if (r < d) {
      // Suppressed output directions that carry no noise of their own would
      // otherwise come back as noiseless channels. Inject noise there; it
      // vanishes with lambda slowly enough that the mapped covariance still
      // blows up, so full suppression is reproduced in the limit.
      Matrix uk = svd.matrixU().rightCols(d - r);
      Eigen::SelfAdjointEigenSolver<Matrix> cover(
          symmetrize(uk.transpose() * tb * uk));
      const double cut = tol.psd_tol * std::max(1.0, tb.cwiseAbs().maxCoeff());
      const double tau = std::sqrt(lambda) * s_scale * s_scale *
                         std::max({1.0, tb.cwiseAbs().maxCoeff()});
      for (Index k = 0; k < cover.eigenvalues().size(); ++k) {
        if (cover.eigenvalues()(k) > cut) continue;
        Vector dir = uk * cover.eigenvectors().col(k);
        theta_eff += tau * dir * dir.transpose();
      }
    }
    Vector inv_sig(d);
    for (Index k = 0; k < d; ++k)
      inv_sig(k) = 1.0 / (k < r ? sv(k) : lambda * s_scale);
    Matrix c_inv = svd.matrixV() * inv_sig.asDiagonal() *
                   svd.matrixU().transpose();
    theta_out.block(off, off, d, d) =
        clamp_psd(c_inv * theta_eff * c_inv.transpose());
    off += d;
  }
  return Sanitization(Matrix::Identity(n, n), std::move(theta_out),
                      s.agent_dims, tol);
}

// ---------------------------------------------------------------------------
// JSON interchange: {"C": [[...]], "Theta": [[...]]}, full N x N matrices.

inline nlohmann::json sanitization_to_json(const Sanitization& s) {
  nlohmann::json j;
  j["C"] = detail::matrix_to_json(s.C);
  j["Theta"] = detail::matrix_to_json(s.Theta);
  return j;
}

inline Sanitization sanitization_from_json(const nlohmann::json& j,
                                           const std::vector<Index>& agent_dims,
                                           const Tolerance& tol = {}) {
  for (const char* key : {"C", "Theta"})
    if (!j.contains(key))
      fail(ErrorKind::model_invalid, std::string("missing field: ") + key);
  return Sanitization(detail::matrix_from_json(j["C"], "C"),
                      detail::matrix_from_json(j["Theta"], "Theta"), agent_dims,
                      tol);
}

inline Sanitization load_sanitization(const std::string& path,
                                      const std::vector<Index>& agent_dims,
                                      const Tolerance& tol = {}) {
  return sanitization_from_json(detail::parse_file(path), agent_dims, tol);
}

inline void save_sanitization(const Sanitization& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::invalid_input, "cannot write file: " + path);
  out << sanitization_to_json(s).dump(2) << "\n";
}

}  // namespace privest
