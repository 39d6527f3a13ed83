#pragma once

#include "privest/crlb.hpp"
#include "privest/model.hpp"
#include "privest/rng.hpp"

namespace fixtures {

using privest::Index;
using privest::Matrix;
using privest::Rng;
using privest::SystemModel;
using privest::Vector;

// Single agent, three measurements of two parameters; the third row of H is
// zero so one measurement direction is pure noise. Public map sees x1,
// private map sees x2.
inline SystemModel three_measurement_no_prior() {
  SystemModel m;
  m.agent_dims = {3};
  m.H = Matrix::Zero(3, 2);
  m.H(0, 0) = 1.0;
  m.H(1, 1) = 1.0;
  m.R = Matrix::Identity(3, 3);
  m.J0 = Matrix::Zero(2, 2);
  m.U = Matrix::Zero(1, 2);
  m.U(0, 0) = 1.0;
  m.G = {Matrix::Zero(1, 2)};
  m.G[0](0, 1) = 1.0;
  m.validate();
  return m;
}

// Same geometry but the public and private maps coincide (no tradeoff room).
inline SystemModel three_measurement_public_equals_private() {
  SystemModel m = three_measurement_no_prior();
  m.G[0] = m.U;
  m.validate();
  return m;
}

// Single agent, identity observations with an identity prior.
inline SystemModel two_by_two_with_prior() {
  SystemModel m;
  m.agent_dims = {2};
  m.H = Matrix::Identity(2, 2);
  m.R = Matrix::Identity(2, 2);
  m.J0 = Matrix::Identity(2, 2);
  m.U = Matrix::Zero(1, 2);
  m.U(0, 0) = 1.0;
  m.G = {Matrix::Zero(1, 2)};
  m.G[0](0, 1) = 1.0;
  m.validate();
  return m;
}

inline SystemModel two_by_two_with_prior_conflicting() {
  SystemModel m = two_by_two_with_prior();
  m.G[0] = m.U;
  m.validate();
  return m;
}

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = rng.next_uniform(lo, hi);
  return m;
}

inline Matrix random_spd(Rng& rng, Index n, double ridge = 0.1) {
  Matrix a = random_matrix(rng, n, n, -0.7, 0.7);
  return a * a.transpose() + ridge * Matrix::Identity(n, n);
}

inline Matrix random_psd(Rng& rng, Index n, Index rank_cap = -1) {
  Index r = rank_cap < 0 ? n : rank_cap;
  Matrix a = random_matrix(rng, n, r, -0.8, 0.8);
  return a * a.transpose();
}

inline Matrix random_orthogonal(Rng& rng, Index n) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, n, n));
  return Matrix(qr.householderQ());
}

inline std::vector<Index> random_partition(Rng& rng, Index n, Index max_agents) {
  if (max_agents <= 1 || n == 1 || rng.next_u64() % 4 == 0) return {n};
  std::vector<Index> dims;
  Index left = n;
  while (left > 0 && static_cast<Index>(dims.size()) + 1 < max_agents) {
    Index take = 1 + static_cast<Index>(rng.next_u64() % left);
    dims.push_back(take);
    left -= take;
  }
  if (left > 0) dims.push_back(left);
  return dims;
}

struct RandomModelOptions {
  Index max_obs = 12;
  Index max_params = 6;
  Index max_agents = 3;
  Index max_public_dim = 0;  // 0 = up to L
  bool with_prior = false;
  bool full_column_rank_h = true;
};

inline SystemModel random_model(Rng& rng, const RandomModelOptions& opt = {}) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Index l = 1 + static_cast<Index>(rng.next_u64() % opt.max_params);
    Index n = 1 + static_cast<Index>(rng.next_u64() % opt.max_obs);
    if (opt.full_column_rank_h && n < l) n = l;
    SystemModel m;
    m.agent_dims = random_partition(rng, n, opt.max_agents);
    m.H = random_matrix(rng, n, l);
    m.R = random_spd(rng, n);
    m.J0 = opt.with_prior
               ? Matrix(privest::inverse_spd(random_spd(rng, l, 0.5), "fixture"))
               : Matrix(Matrix::Zero(l, l));
    Index u_cap = opt.max_public_dim > 0 ? std::min(opt.max_public_dim, l) : l;
    const Index u_dim = 1 + static_cast<Index>(rng.next_u64() % u_cap);
    m.U = random_matrix(rng, u_dim, l);
    const Index g_dim = 1 + static_cast<Index>(rng.next_u64() % l);
    for (size_t i = 0; i < m.agent_dims.size(); ++i)
      m.G.push_back(random_matrix(rng, g_dim, l));
    try {
      m.validate();
      return m;
    } catch (const privest::Error&) {
      continue;  // rank-deficient draw; resample
    }
  }
  throw std::runtime_error("random_model: could not draw a valid model");
}

inline Matrix random_block_psd_theta(Rng& rng, const SystemModel& m,
                                     double scale = 1.0) {
  const Index n = m.n_obs();
  Matrix theta = Matrix::Zero(n, n);
  Index off = 0;
  for (Index d : m.agent_dims) {
    theta.block(off, off, d, d) = scale * random_psd(rng, d);
    off += d;
  }
  return theta;
}

inline Matrix random_block_invertible(Rng& rng, const SystemModel& m) {
  const Index n = m.n_obs();
  Matrix a = Matrix::Zero(n, n);
  Index off = 0;
  for (Index d : m.agent_dims) {
    for (int attempt = 0;; ++attempt) {
      Matrix blk = random_matrix(rng, d, d);
      if (std::abs(Eigen::FullPivLU<Matrix>(blk).determinant()) > 1e-4 ||
          attempt > 20) {
        a.block(off, off, d, d) = blk;
        break;
      }
    }
    off += d;
  }
  return a;
}

}  // namespace fixtures
