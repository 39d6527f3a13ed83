#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "privest/errors.hpp"

namespace privest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Numerical tolerances shared across the library. `rel_rank_tol` left unset
/// means the size-dependent default eps * max(rows, cols) is applied per call.
struct Tolerance {
  std::optional<double> rel_rank_tol;
  double psd_tol = 1e-9;
  double solve_tol = 1e-8;

  double rank_tol_for(Index rows, Index cols) const {
    if (rel_rank_tol) return *rel_rank_tol;
    return std::numeric_limits<double>::epsilon() *
           static_cast<double>(std::max(rows, cols));
  }

  void validate() const {
    if (rel_rank_tol && (!(*rel_rank_tol > 0.0) || !(*rel_rank_tol < 1.0)))
      fail(ErrorKind::invalid_input, "rel_rank_tol must lie in (0, 1)");
    if (!(psd_tol > 0.0) || !(solve_tol > 0.0))
      fail(ErrorKind::invalid_input, "psd_tol and solve_tol must be positive");
  }
};

/// Columns form an orthonormal set in R^ambient_dim. May be empty.
struct OrthonormalBasis {
  Matrix vectors;     // ambient_dim x k, k >= 0
  Index ambient_dim = 0;

  Index dim() const { return vectors.cols(); }
};

namespace detail {

inline void require_finite(const Matrix& a, const char* who) {
  if (!a.allFinite())
    fail(ErrorKind::invalid_input,
         std::string(who) + ": matrix has non-finite entries");
}

inline Eigen::BDCSVD<Matrix> svd_full(const Matrix& a) {
  return Eigen::BDCSVD<Matrix>(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
}

inline Index rank_from_singular_values(const Vector& sv, double rel_tol) {
  if (sv.size() == 0) return 0;
  const double cutoff = rel_tol * sv(0);  // singular values sorted decreasing
  Index r = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++r;
  return r;
}

}  // namespace detail

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Numerical rank: count of singular values above rel_rank_tol * sigma_max.
inline Index rank_tol(const Matrix& a, const Tolerance& tol = {}) {
  detail::require_finite(a, "rank_tol");
  tol.validate();
  if (a.rows() == 0 || a.cols() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(a);
  return detail::rank_from_singular_values(svd.singularValues(),
                                           tol.rank_tol_for(a.rows(), a.cols()));
}

/// Orthonormal basis of the (numerical) null space of `a`.
inline OrthonormalBasis null_basis(const Matrix& a, const Tolerance& tol = {}) {
  detail::require_finite(a, "null_basis");
  tol.validate();
  const Index n = a.cols();
  if (a.rows() == 0 || n == 0)
    return {Matrix::Identity(n, n), n};
  auto svd = detail::svd_full(a);
  const Index r = detail::rank_from_singular_values(
      svd.singularValues(), tol.rank_tol_for(a.rows(), a.cols()));
  return {svd.matrixV().rightCols(n - r), n};
}

/// Orthonormal basis of the row space of `a` (as column vectors in R^cols).
inline OrthonormalBasis row_basis(const Matrix& a, const Tolerance& tol = {}) {
  detail::require_finite(a, "row_basis");
  tol.validate();
  const Index n = a.cols();
  if (a.rows() == 0 || n == 0) return {Matrix(n, 0), n};
  auto svd = detail::svd_full(a);
  const Index r = detail::rank_from_singular_values(
      svd.singularValues(), tol.rank_tol_for(a.rows(), a.cols()));
  return {svd.matrixV().leftCols(r), n};
}

/// Extends an orthonormal set to a full square orthogonal matrix whose first
/// columns are exactly the given ones.
inline Matrix complete_unitary(const OrthonormalBasis& partial) {
  const Index n = partial.ambient_dim;
  const Index k = partial.vectors.cols();
  if (partial.vectors.rows() != n)
    fail(ErrorKind::invalid_input, "complete_unitary: ambient_dim mismatch");
  detail::require_finite(partial.vectors, "complete_unitary");
  if (k > 0) {
    Matrix gram = partial.vectors.transpose() * partial.vectors;
    if ((gram - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-10)
      fail(ErrorKind::invalid_input,
           "complete_unitary: columns are not orthonormal");
  }
  if (k == n) return partial.vectors;
  if (k == 0) return Matrix::Identity(n, n);
  // Householder QR of the partial basis; the trailing columns of Q span the
  // orthogonal complement exactly.
  Eigen::HouseholderQR<Matrix> qr(partial.vectors);
  Matrix q = qr.householderQ();
  Matrix out(n, n);
  out.leftCols(k) = partial.vectors;
  out.rightCols(n - k) = q.rightCols(n - k);
  return out;
}

/// True iff the smallest eigenvalue of (a + a^T)/2 is >= -psd_tol * ||a||.
inline bool is_psd(const Matrix& a, const Tolerance& tol = {}) {
  detail::require_finite(a, "is_psd");
  tol.validate();
  if (a.rows() != a.cols())
    fail(ErrorKind::invalid_input, "is_psd: matrix not square");
  if (a.rows() == 0) return true;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    fail(ErrorKind::invalid_input, "is_psd: matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a),
                                           Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  return lmin >= -tol.psd_tol * lmax;
}

/// Strict positive definiteness with a relative margin.
inline bool is_pd(const Matrix& a, const Tolerance& tol = {}) {
  detail::require_finite(a, "is_pd");
  if (a.rows() != a.cols())
    fail(ErrorKind::invalid_input, "is_pd: matrix not square");
  if (a.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a),
                                           Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  return lmin > tol.psd_tol * std::max(lmax, 1e-300);
}

/// Solves a * x = b for symmetric positive definite a via Cholesky.
inline Matrix solve_spd(const Matrix& a, const Matrix& b, const char* who) {
  Eigen::LLT<Matrix> llt(symmetrize(a));
  if (llt.info() != Eigen::Success)
    fail(ErrorKind::solver_failure,
         std::string(who) + ": matrix not positive definite");
  return llt.solve(b);
}

/// Inverse of a symmetric positive definite matrix (used where the inverse
/// itself is the requested output).
inline Matrix inverse_spd(const Matrix& a, const char* who) {
  return solve_spd(a, Matrix::Identity(a.rows(), a.cols()), who);
}

/// Clamp a nearly-PSD symmetric matrix onto the PSD cone by zeroing
/// negative eigenvalues.
inline Matrix clamp_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a));
  Vector lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline double frobenius_rel_err(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

}  // namespace privest
