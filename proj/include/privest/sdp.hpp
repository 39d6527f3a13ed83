#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "privest/linalg.hpp"

namespace privest {

// ---------------------------------------------------------------------------
// Problem description. Variables are symmetric PSD blocks X_1..X_k; the
// objective and every scalar functional are trace inner products against
// per-block coefficient matrices. LMI constraints are affine matrix maps
// built from congruences sign * P X_b P'.

struct LinearFunctional {
  std::map<int, Matrix> coeffs;  // block index -> symmetric coefficient

  double value(const std::vector<Matrix>& blocks) const {
    double v = 0.0;
    for (const auto& [j, a] : coeffs) v += (a * blocks[j]).trace();
    return v;
  }
};

struct CongruenceTerm {
  int block = 0;
  Matrix P;          // d x n_block
  double sign = 1.0;
};

/// F0 + sum_t sign_t P_t X_{b_t} P_t'  required PSD.
struct LmiConstraint {
  Matrix F0;
  std::vector<CongruenceTerm> terms;

  Index dim() const { return F0.rows(); }
  Matrix value(const std::vector<Matrix>& blocks) const {
    Matrix m = F0;
    for (const auto& t : terms)
      m += t.sign * t.P * blocks[t.block] * t.P.transpose();
    return symmetrize(m);
  }
};

struct ScalarConstraint {
  LinearFunctional lhs;
  double rhs = 0.0;
  bool greater_equal = true;  // lhs >= rhs, else lhs <= rhs
};

struct SdpProblem {
  std::vector<Index> variable_dims;
  LinearFunctional objective;
  double objective_constant = 0.0;
  bool maximize = false;
  std::vector<std::pair<LinearFunctional, double>> equalities;
  std::vector<ScalarConstraint> inequalities;
  std::vector<LmiConstraint> lmis;
  std::vector<Matrix> initial_point;  // optional, one entry per variable block
};

struct SdpSolution {
  enum class Status { optimal, infeasible, max_iter };

  std::vector<Matrix> blocks;
  double objective_value = 0.0;
  Status status = Status::max_iter;
  struct Residuals {
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
  } kkt;
  int iterations = 0;
};

namespace sdp_detail {

// One coefficient of a constraint row on one block: either a dense symmetric
// matrix or scale * sym(e_r e_c'), the unit form produced by LMI slack rows.
struct Coeff {
  int block = 0;
  bool unit = false;
  Index r = 0, c = 0;
  double scale = 1.0;
  Matrix dense;

  double dot(const Matrix& m) const {
    if (unit) return scale * m(r, c);
    return (dense.array() * m.array()).sum();
  }
  void add_to(Matrix& acc, double w) const {
    if (unit) {
      if (r == c) {
        acc(r, c) += w * scale;
      } else {
        acc(r, c) += 0.5 * w * scale;
        acc(c, r) += 0.5 * w * scale;
      }
    } else {
      acc += w * dense;
    }
  }
};

struct Row {
  std::vector<Coeff> coeffs;
  double rhs = 0.0;
};

struct StandardForm {
  std::vector<Index> dims;          // all blocks: variables then slacks
  std::vector<Matrix> C;            // objective per block (minimization)
  std::vector<Row> rows;
  Index n_user_blocks = 0;
  double obj_sign = 1.0;            // applied when reporting
  double obj_constant = 0.0;
};

inline Matrix sym_outer(const Vector& a, const Vector& b) {
  return 0.5 * (a * b.transpose() + b * a.transpose());
}

// Flattens user equalities over the variable blocks, drops dependent rows and
// detects inconsistent ones. LMI-entry and slack rows never need this: each
// contains a variable unique to it.
inline void reduce_equalities(std::vector<Row>& rows,
                              const std::vector<Index>& dims,
                              Index n_user_blocks) {
  if (rows.empty()) return;
  std::vector<Index> offs(n_user_blocks, 0);
  Index total = 0;
  for (Index j = 0; j < n_user_blocks; ++j) {
    offs[j] = total;
    total += dims[j] * dims[j];
  }
  const Index m = static_cast<Index>(rows.size());
  Matrix e = Matrix::Zero(m, total);
  Vector b(m);
  for (Index i = 0; i < m; ++i) {
    b(i) = rows[i].rhs;
    for (const auto& cf : rows[i].coeffs) {
      Matrix d = cf.unit ? Matrix(cf.scale * sym_outer(
                                      Vector::Unit(dims[cf.block], cf.r),
                                      Vector::Unit(dims[cf.block], cf.c)))
                         : cf.dense;
      for (Index r = 0; r < d.rows(); ++r)
        for (Index c = 0; c < d.cols(); ++c)
          e(i, offs[cf.block] + r * d.cols() + c) += d(r, c);
    }
  }
  Eigen::BDCSVD<Matrix> svd(e, Eigen::ComputeFullU | Eigen::ComputeThinV);
  const double cut = 1e-12 * std::max(svd.singularValues()(0), 1e-300);
  Index rank = 0;
  for (Index k = 0; k < svd.singularValues().size(); ++k)
    if (svd.singularValues()(k) > cut) ++rank;
  Vector ub = svd.matrixU().transpose() * b;
  for (Index k = rank; k < ub.size(); ++k)
    if (std::abs(ub(k)) > 1e-9 * std::max(1.0, b.norm()))
      fail(ErrorKind::infeasible, "solve_sdp: inconsistent equality constraints");

  std::vector<Row> reduced;
  for (Index k = 0; k < rank; ++k) {
    Row row;
    row.rhs = ub(k);
    Vector flat = svd.singularValues()(k) * svd.matrixV().col(k);
    for (Index j = 0; j < n_user_blocks; ++j) {
      Matrix d(dims[j], dims[j]);
      for (Index r = 0; r < dims[j]; ++r)
        for (Index c = 0; c < dims[j]; ++c)
          d(r, c) = flat(offs[j] + r * dims[j] + c);
      d = symmetrize(d);
      if (d.cwiseAbs().maxCoeff() > 1e-14) {
        Coeff cf;
        cf.block = static_cast<int>(j);
        cf.dense = d;
        row.coeffs.push_back(std::move(cf));
      }
    }
    reduced.push_back(std::move(row));
  }
  rows.swap(reduced);
}

inline StandardForm build_standard_form(const SdpProblem& p) {
  StandardForm sf;
  sf.dims = p.variable_dims;
  sf.n_user_blocks = static_cast<Index>(p.variable_dims.size());
  sf.obj_sign = p.maximize ? -1.0 : 1.0;
  sf.obj_constant = p.objective_constant;

  for (Index j = 0; j < sf.n_user_blocks; ++j) {
    auto it = p.objective.coeffs.find(static_cast<int>(j));
    Matrix c = it == p.objective.coeffs.end()
                   ? Matrix::Zero(p.variable_dims[j], p.variable_dims[j])
                   : symmetrize(it->second);
    sf.C.push_back(sf.obj_sign * c);
  }

  std::vector<Row> user_rows;
  for (const auto& [fn, rhs] : p.equalities) {
    Row row;
    row.rhs = rhs;
    for (const auto& [j, a] : fn.coeffs) {
      Coeff cf;
      cf.block = j;
      cf.dense = symmetrize(a);
      row.coeffs.push_back(std::move(cf));
    }
    user_rows.push_back(std::move(row));
  }
  reduce_equalities(user_rows, sf.dims, sf.n_user_blocks);
  sf.rows = std::move(user_rows);

  // Scalar inequalities: one nonnegative 1x1 slack each.
  for (const auto& ineq : p.inequalities) {
    const int slack = static_cast<int>(sf.dims.size());
    sf.dims.push_back(1);
    sf.C.push_back(Matrix::Zero(1, 1));
    Row row;
    row.rhs = ineq.rhs;
    for (const auto& [j, a] : ineq.lhs.coeffs) {
      Coeff cf;
      cf.block = j;
      cf.dense = symmetrize(a);
      row.coeffs.push_back(std::move(cf));
    }
    Coeff s;
    s.block = slack;
    s.unit = true;
    s.r = s.c = 0;
    s.scale = ineq.greater_equal ? -1.0 : 1.0;
    row.coeffs.push_back(s);
    sf.rows.push_back(std::move(row));
  }

  // LMIs: a PSD slack block matched entrywise.
  for (const auto& lmi : p.lmis) {
    const int slack = static_cast<int>(sf.dims.size());
    const Index d = lmi.dim();
    sf.dims.push_back(d);
    sf.C.push_back(Matrix::Zero(d, d));
    for (Index r = 0; r < d; ++r) {
      for (Index c = r; c < d; ++c) {
        Row row;
        row.rhs = -lmi.F0(r, c);
        for (const auto& t : lmi.terms) {
          Coeff cf;
          cf.block = t.block;
          cf.dense = t.sign * sym_outer(t.P.row(r).transpose(),
                                        t.P.row(c).transpose());
          row.coeffs.push_back(std::move(cf));
        }
        Coeff s;
        s.block = slack;
        s.unit = true;
        s.r = r;
        s.c = c;
        s.scale = -1.0;
        row.coeffs.push_back(s);
        sf.rows.push_back(std::move(row));
      }
    }
  }
  return sf;
}

struct BlockScaling {
  Matrix R;      // W = R R'
  Matrix R_inv;
  Vector lambda; // scaled spectrum, shared by X and S
  Matrix W;
};

inline Eigen::LLT<Matrix> chol_with_ridge(const Matrix& a, const char* who) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  double ridge = 1e-14 * std::max(a.trace(), 1.0);
  for (int k = 0; k < 8; ++k, ridge *= 100.0) {
    llt.compute(a + ridge * Matrix::Identity(a.rows(), a.cols()));
    if (llt.info() == Eigen::Success) return llt;
  }
  fail(ErrorKind::solver_failure, std::string(who) + ": iterate left the cone");
}

inline BlockScaling nt_scaling(const Matrix& x, const Matrix& s) {
  Eigen::LLT<Matrix> lx = chol_with_ridge(x, "solve_sdp");
  Eigen::LLT<Matrix> ls = chol_with_ridge(s, "solve_sdp");
  Matrix lx_m = lx.matrixL();
  Matrix ls_m = ls.matrixL();
  Eigen::BDCSVD<Matrix> svd(Matrix(ls_m.transpose() * lx_m),
                            Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector sig = svd.singularValues().cwiseMax(1e-150);
  Vector inv_sqrt = sig.cwiseSqrt().cwiseInverse();
  BlockScaling out;
  out.R = lx_m * svd.matrixV() * inv_sqrt.asDiagonal();
  out.R_inv = inv_sqrt.asDiagonal() * svd.matrixU().transpose() *
              ls_m.transpose();
  out.lambda = sig;
  out.W = out.R * out.R.transpose();
  return out;
}

inline double step_to_boundary(const Matrix& x, const Matrix& dx) {
  Eigen::LLT<Matrix> llt(x);
  Matrix l = llt.matrixL();
  Matrix mid = l.triangularView<Eigen::Lower>().solve(dx);
  Matrix scaled =
      l.triangularView<Eigen::Lower>().solve(mid.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(scaled),
                                           Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

}  // namespace sdp_detail

/// Dense primal-dual interior-point solve with Nesterov-Todd scaling and a
/// Mehrotra predictor-corrector step. Deterministic for fixed inputs.
inline SdpSolution solve_sdp(const SdpProblem& p, double tol = 1e-8,
                             int max_iter = 100) {
  using namespace sdp_detail;
  StandardForm sf = build_standard_form(p);
  const Index nb = static_cast<Index>(sf.dims.size());
  const Index m = static_cast<Index>(sf.rows.size());
  Index nu = 0;
  for (Index d : sf.dims) nu += d;

  // Block -> rows touching it, for sparse Schur assembly.
  std::vector<std::vector<std::pair<Index, const Coeff*>>> touch(nb);
  for (Index i = 0; i < m; ++i)
    for (const auto& cf : sf.rows[i].coeffs)
      touch[cf.block].push_back({i, &cf});

  Vector b(m);
  for (Index i = 0; i < m; ++i) b(i) = sf.rows[i].rhs;
  double c_norm = 0.0;
  for (const auto& c : sf.C) c_norm += c.squaredNorm();
  c_norm = std::sqrt(c_norm);

  // Initial point: warm-started variable blocks when provided, slack blocks
  // from the constraint values shifted into the cone interior.
  std::vector<Matrix> x(nb), s(nb);
  const double init_scale = std::max({1.0, b.lpNorm<Eigen::Infinity>()});
  for (Index j = 0; j < nb; ++j) {
    x[j] = init_scale * Matrix::Identity(sf.dims[j], sf.dims[j]);
    s[j] = std::max(1.0, c_norm) * Matrix::Identity(sf.dims[j], sf.dims[j]);
  }
  if (!p.initial_point.empty()) {
    for (Index j = 0; j < sf.n_user_blocks && j < static_cast<Index>(p.initial_point.size()); ++j) {
      if (p.initial_point[j].rows() != sf.dims[j]) continue;
      Matrix cand = clamp_psd(p.initial_point[j]) +
                    1e-3 * init_scale * Matrix::Identity(sf.dims[j], sf.dims[j]);
      x[j] = cand;
    }
    // Slacks consistent with the warm start where possible.
    Index slack_idx = sf.n_user_blocks;
    for (const auto& ineq : p.inequalities) {
      double v = 0.0;
      for (const auto& [j, a] : ineq.lhs.coeffs)
        if (j < static_cast<int>(sf.n_user_blocks)) v += (a * x[j]).trace();
      double slack = ineq.greater_equal ? v - ineq.rhs : ineq.rhs - v;
      x[slack_idx](0, 0) = std::max(slack, 1e-3 * init_scale);
      ++slack_idx;
    }
    for (const auto& lmi : p.lmis) {
      std::vector<Matrix> user_x(x.begin(), x.begin() + sf.n_user_blocks);
      Matrix v = lmi.value(user_x);
      Eigen::SelfAdjointEigenSolver<Matrix> es(v);
      Vector lam = es.eigenvalues().cwiseMax(1e-3 * init_scale);
      x[slack_idx] = es.eigenvectors() * lam.asDiagonal() *
                     es.eigenvectors().transpose();
      ++slack_idx;
    }
  }

  Vector y = Vector::Zero(m);
  SdpSolution sol;
  sol.blocks.assign(sf.C.begin(), sf.C.begin() + sf.n_user_blocks);

  auto record = [&](SdpSolution::Status st, double pres, double dres,
                    double gap, int iter) {
    sol.status = st;
    sol.kkt = {pres, dres, gap};
    sol.iterations = iter;
    sol.blocks.assign(x.begin(), x.begin() + sf.n_user_blocks);
    double pobj = 0.0;
    for (Index j = 0; j < nb; ++j) pobj += (sf.C[j] * x[j]).trace();
    sol.objective_value = sf.obj_sign * pobj + sf.obj_constant;
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    // Residuals.
    Vector r_p = b;
    for (Index i = 0; i < m; ++i)
      for (const auto& cf : sf.rows[i].coeffs) r_p(i) -= cf.dot(x[cf.block]);
    std::vector<Matrix> r_d(nb);
    for (Index j = 0; j < nb; ++j) {
      Matrix aty = Matrix::Zero(sf.dims[j], sf.dims[j]);
      for (const auto& [i, cf] : touch[j]) cf->add_to(aty, y(i));
      r_d[j] = sf.C[j] - s[j] - aty;
    }
    double mu = 0.0;
    for (Index j = 0; j < nb; ++j) mu += (x[j] * s[j]).trace();
    mu /= static_cast<double>(nu);

    double pobj = 0.0, dobj = b.dot(y);
    for (Index j = 0; j < nb; ++j) pobj += (sf.C[j] * x[j]).trace();
    double dres = 0.0;
    for (Index j = 0; j < nb; ++j) dres = std::max(dres, r_d[j].norm());
    const double pres = r_p.norm() / (1.0 + b.norm());
    const double dres_rel = dres / (1.0 + c_norm);
    const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));

    if (pres <= tol && dres_rel <= tol && gap <= tol) {
      record(SdpSolution::Status::optimal, pres, dres_rel, gap, iter);
      return sol;
    }
    // Primal infeasibility certificate: dual objective runs away while the
    // dual residual stays negligible.
    if (dobj > 1e8 * std::max({1.0, c_norm, b.norm()}) && dres_rel <= 1e-6) {
      record(SdpSolution::Status::infeasible, pres, dres_rel, gap, iter);
      return sol;
    }

    // Scaling and Schur complement.
    std::vector<BlockScaling> sc(nb);
    for (Index j = 0; j < nb; ++j) sc[j] = nt_scaling(x[j], s[j]);

    Matrix big_m = Matrix::Zero(m, m);
    for (Index k = 0; k < m; ++k) {
      for (const auto& cfk : sf.rows[k].coeffs) {
        const Index j = cfk.block;
        Matrix u;  // W A_k W on block j
        if (cfk.unit) {
          Vector wr = sc[j].W.col(cfk.r);
          Vector wc = sc[j].W.col(cfk.c);
          u = cfk.scale * sym_outer(wr, wc);
        } else {
          u = sc[j].W * cfk.dense * sc[j].W;
        }
        for (const auto& [i, cfi] : touch[j])
          if (i <= k) big_m(i, k) += cfi->dot(u);
      }
    }
    big_m = big_m.selfadjointView<Eigen::Upper>();
    Eigen::LDLT<Matrix> schur(big_m);
    if (schur.info() != Eigen::Success) {
      record(SdpSolution::Status::max_iter, pres, dres_rel, gap, iter);
      return sol;
    }

    auto newton = [&](const std::vector<Matrix>& target_scaled,
                      std::vector<Matrix>& dx, std::vector<Matrix>& ds,
                      Vector& dy) {
      // V_j solves lambda o V = T in the scaled basis.
      std::vector<Matrix> rvr(nb), wrw(nb);
      for (Index j = 0; j < nb; ++j) {
        const Index d = sf.dims[j];
        Matrix v(d, d);
        for (Index a = 0; a < d; ++a)
          for (Index c2 = 0; c2 < d; ++c2)
            v(a, c2) = 2.0 * target_scaled[j](a, c2) /
                       (sc[j].lambda(a) + sc[j].lambda(c2));
        rvr[j] = sc[j].R * v * sc[j].R.transpose();
        wrw[j] = sc[j].W * r_d[j] * sc[j].W;
      }
      Vector rhs = r_p;
      for (Index i = 0; i < m; ++i)
        for (const auto& cf : sf.rows[i].coeffs)
          rhs(i) += -cf.dot(rvr[cf.block]) + cf.dot(wrw[cf.block]);
      dy = schur.solve(rhs);
      for (Index j = 0; j < nb; ++j) {
        Matrix aty = Matrix::Zero(sf.dims[j], sf.dims[j]);
        for (const auto& [i, cf] : touch[j]) cf->add_to(aty, dy(i));
        ds[j] = r_d[j] - aty;
        dx[j] = symmetrize(rvr[j] - sc[j].W * ds[j] * sc[j].W);
      }
    };

    std::vector<Matrix> dx(nb), ds(nb), target(nb);
    Vector dy;
    // Predictor: drive lambda^2 to zero.
    for (Index j = 0; j < nb; ++j)
      target[j] = Matrix(
          (-sc[j].lambda.array() * sc[j].lambda.array()).matrix().asDiagonal());
    newton(target, dx, ds, dy);

    double ap = 1.0, ad = 1.0;
    for (Index j = 0; j < nb; ++j) {
      ap = std::min(ap, step_to_boundary(x[j], dx[j]));
      ad = std::min(ad, step_to_boundary(s[j], ds[j]));
    }
    double mu_aff = 0.0;
    for (Index j = 0; j < nb; ++j)
      mu_aff += ((x[j] + std::min(1.0, 0.99 * ap) * dx[j]) *
                 (s[j] + std::min(1.0, 0.99 * ad) * ds[j]))
                    .trace();
    mu_aff = std::max(mu_aff / static_cast<double>(nu), 0.0);
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::min(std::max(sigma, 1e-8), 1.0);

    // Corrector with the Mehrotra second-order term in the scaled space.
    for (Index j = 0; j < nb; ++j) {
      Matrix dxs = sc[j].R_inv * dx[j] * sc[j].R_inv.transpose();
      Matrix dss = sc[j].R.transpose() * ds[j] * sc[j].R;
      Matrix cross = 0.5 * (dxs * dss + dss * dxs);
      target[j] =
          Matrix((-sc[j].lambda.array() * sc[j].lambda.array()).matrix()
                     .asDiagonal());
      target[j] += sigma * mu *
                   Matrix::Identity(sf.dims[j], sf.dims[j]);
      target[j] -= cross;
    }
    newton(target, dx, ds, dy);

    ap = ad = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < nb; ++j) {
      ap = std::min(ap, step_to_boundary(x[j], dx[j]));
      ad = std::min(ad, step_to_boundary(s[j], ds[j]));
    }
    const double eta = 0.99;
    ap = std::min(1.0, eta * ap);
    ad = std::min(1.0, eta * ad);

    // Eigenvalue roundoff can overshoot the boundary fraction; back off until
    // both new iterates factor.
    auto cone_ok = [&](double a_p, double a_d) {
      for (Index j = 0; j < nb; ++j) {
        Eigen::LLT<Matrix> tx(symmetrize(x[j] + a_p * dx[j]));
        if (tx.info() != Eigen::Success) return false;
        Eigen::LLT<Matrix> ts(symmetrize(s[j] + a_d * ds[j]));
        if (ts.info() != Eigen::Success) return false;
      }
      return true;
    };
    for (int back = 0; back < 40 && !cone_ok(ap, ad); ++back) {
      ap *= 0.8;
      ad *= 0.8;
    }

    for (Index j = 0; j < nb; ++j) {
      x[j] = symmetrize(x[j] + ap * dx[j]);
      s[j] = symmetrize(s[j] + ad * ds[j]);
    }
    y += ad * dy;

    if (iter == max_iter - 1)
      record(SdpSolution::Status::max_iter, pres, dres_rel, gap, iter + 1);
  }
  if (sol.blocks.empty() || sol.blocks[0].size() == 0)
    record(SdpSolution::Status::max_iter, 0, 0, 0, max_iter);
  return sol;
}

/// Text dump for cross-checking against external solvers: objective, then one
/// constraint per line, symmetric matrices row-major.
inline std::string dump_problem(const SdpProblem& p) {
  std::ostringstream os;
  os.precision(17);
  auto put_matrix = [&](const Matrix& m) {
    os << "[";
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c)
        os << m(r, c) << ((r + 1 == m.rows() && c + 1 == m.cols()) ? "" : " ");
    os << "]";
  };
  auto put_fn = [&](const LinearFunctional& fn) {
    for (const auto& [j, a] : fn.coeffs) {
      os << " X" << j << ":";
      put_matrix(a);
    }
  };
  os << "blocks";
  for (Index d : p.variable_dims) os << " " << d;
  os << "\n" << (p.maximize ? "maximize" : "minimize");
  put_fn(p.objective);
  os << "\n";
  for (const auto& [fn, rhs] : p.equalities) {
    os << "eq";
    put_fn(fn);
    os << " = " << rhs << "\n";
  }
  for (const auto& iq : p.inequalities) {
    os << "ineq";
    put_fn(iq.lhs);
    os << (iq.greater_equal ? " >= " : " <= ") << iq.rhs << "\n";
  }
  for (const auto& lmi : p.lmis) {
    os << "lmi F0:";
    put_matrix(lmi.F0);
    for (const auto& t : lmi.terms) {
      os << " term X" << t.block << " sign " << t.sign << " P:";
      put_matrix(t.P);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace privest
