#pragma once

#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "privest/linalg.hpp"

namespace privest {

/// Multi-agent linear observation model. Immutable after construction; all
/// invariants are checked by validate().
///
/// y = H x + n with n ~ N(0, R); agent i owns the contiguous row block of
/// size agent_dims[i]. The fusion center estimates u = U x; each agent i
/// shields g_i = G[i] x. J0 is the prior Fisher information (exact zero
/// matrix means no prior).
struct SystemModel {
  std::vector<Index> agent_dims;
  Matrix H;               // N x L
  Matrix R;               // N x N
  Matrix J0;              // L x L, zero when no prior information exists
  Matrix U;               // U_dim x L
  std::vector<Matrix> G;  // S entries, G[i] is G_i_dim x L (may be zero)

  Index n_obs() const { return H.rows(); }
  Index n_params() const { return H.cols(); }
  Index n_agents() const { return static_cast<Index>(agent_dims.size()); }
  bool has_prior() const { return !J0.isZero(0.0); }

  void validate(const Tolerance& tol = {}) const;
};

/// Contiguous measurement rows owned by one agent. agent_index is 1-based,
/// offset is the 0-based start row.
struct AgentSlice {
  int agent_index = 0;
  Index offset = 0;
  Index size = 0;
};

/// Per-agent privacy thresholds and optional noise power budgets.
struct PrivacyRequest {
  std::vector<double> eps;
  std::optional<std::vector<double>> delta;

  void validate(Index n_agents) const {
    if (static_cast<Index>(eps.size()) != n_agents)
      fail(ErrorKind::invalid_input, "eps: expected one threshold per agent");
    for (double e : eps)
      if (!(e >= 0.0) || !std::isfinite(e))
        fail(ErrorKind::invalid_input, "eps: thresholds must be >= 0");
    if (delta) {
      if (static_cast<Index>(delta->size()) != n_agents)
        fail(ErrorKind::invalid_input, "delta: expected one budget per agent");
      for (double d : *delta)
        if (!(d > 0.0))
          fail(ErrorKind::invalid_input, "delta: budgets must be positive");
    }
  }
};

inline AgentSlice agent_slice(const SystemModel& model, int agent_index) {
  if (agent_index < 1 || agent_index > model.n_agents())
    fail(ErrorKind::invalid_input,
         "agent_slice: index " + std::to_string(agent_index) +
             " out of range 1.." + std::to_string(model.n_agents()));
  Index offset = 0;
  for (int k = 0; k + 1 < agent_index; ++k) offset += model.agent_dims[k];
  return {agent_index, offset, model.agent_dims[agent_index - 1]};
}

inline void SystemModel::validate(const Tolerance& tol) const {
  const Index N = H.rows();
  const Index L = H.cols();
  if (N == 0 || L == 0)
    fail(ErrorKind::model_invalid, "H: must be non-empty");
  if (!H.allFinite()) fail(ErrorKind::model_invalid, "H: non-finite entries");

  if (agent_dims.empty())
    fail(ErrorKind::model_invalid, "agent_dims: must be non-empty");
  Index total = 0;
  for (Index d : agent_dims) {
    if (d <= 0) fail(ErrorKind::model_invalid, "agent_dims: entries must be positive");
    total += d;
  }
  if (total != N)
    fail(ErrorKind::model_invalid,
         "agent_dims: sum " + std::to_string(total) + " does not match rows(H) = " +
             std::to_string(N));

  if (R.rows() != N || R.cols() != N)
    fail(ErrorKind::model_invalid, "R: expected " + std::to_string(N) + "x" +
                                       std::to_string(N) + " matrix");
  if (!R.allFinite()) fail(ErrorKind::model_invalid, "R: non-finite entries");
  {
    const double scale = std::max(1.0, R.cwiseAbs().maxCoeff());
    if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      fail(ErrorKind::model_invalid, "R: not symmetric");
    if (!is_pd(R, tol))
      fail(ErrorKind::model_invalid, "R: not positive definite");
  }

  if (J0.rows() != L || J0.cols() != L)
    fail(ErrorKind::model_invalid, "J0: expected " + std::to_string(L) + "x" +
                                       std::to_string(L) + " matrix");
  if (!J0.allFinite()) fail(ErrorKind::model_invalid, "J0: non-finite entries");
  if (has_prior()) {
    const double scale = std::max(1.0, J0.cwiseAbs().maxCoeff());
    if ((J0 - J0.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      fail(ErrorKind::model_invalid, "J0: not symmetric");
    // The formulas split on "no prior" versus "positive definite prior";
    // a singular nonzero prior fits neither case and is rejected.
    if (!is_pd(J0, tol))
      fail(ErrorKind::model_invalid,
           "J0: must be exactly zero (no prior) or positive definite");
  }

  if (U.cols() != L || U.rows() == 0)
    fail(ErrorKind::model_invalid, "U: expected U_dim x " + std::to_string(L));
  if (!U.allFinite()) fail(ErrorKind::model_invalid, "U: non-finite entries");

  if (G.size() != agent_dims.size())
    fail(ErrorKind::model_invalid, "G: expected one matrix per agent");
  bool any_nonzero = false;
  for (size_t i = 0; i < G.size(); ++i) {
    if (G[i].cols() != L || G[i].rows() == 0)
      fail(ErrorKind::model_invalid,
           "G[" + std::to_string(i) + "]: expected G_dim x " + std::to_string(L));
    if (!G[i].allFinite())
      fail(ErrorKind::model_invalid, "G[" + std::to_string(i) + "]: non-finite entries");
    if (!G[i].isZero(0.0)) any_nonzero = true;
  }
  if (!any_nonzero)
    fail(ErrorKind::model_invalid, "G: at least one private map must be nonzero");

  if (!has_prior()) {
    Matrix info = H.transpose() * solve_spd(R, H, "model validation");
    if (rank_tol(symmetrize(info), tol) < L)
      fail(ErrorKind::model_invalid,
           "H'inv(R)H singular with no prior: baseline CRLB undefined");
  }
}

// ---------------------------------------------------------------------------
// JSON interchange. Matrices are row-major arrays of arrays of finite doubles;
// "J0": null means no prior information.

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.empty())
    fail(ErrorKind::model_invalid, field + ": expected non-empty array of rows");
  const size_t rows = j.size();
  if (!j[0].is_array())
    fail(ErrorKind::model_invalid, field + ": expected array of arrays");
  const size_t cols = j[0].size();
  Matrix m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      fail(ErrorKind::model_invalid, field + ": ragged rows");
    for (size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        fail(ErrorKind::model_invalid, field + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::model_invalid, "cannot open file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::model_invalid, "parse error in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace detail

inline nlohmann::json model_to_json(const SystemModel& model) {
  nlohmann::json j;
  j["agent_dims"] = model.agent_dims;
  j["H"] = detail::matrix_to_json(model.H);
  j["R"] = detail::matrix_to_json(model.R);
  j["J0"] = model.has_prior() ? detail::matrix_to_json(model.J0)
                              : nlohmann::json(nullptr);
  j["U"] = detail::matrix_to_json(model.U);
  nlohmann::json gs = nlohmann::json::array();
  for (const auto& g : model.G) gs.push_back(detail::matrix_to_json(g));
  j["G"] = gs;
  return j;
}

inline SystemModel model_from_json(const nlohmann::json& j) {
  SystemModel m;
  for (const char* key : {"agent_dims", "H", "R", "U", "G"})
    if (!j.contains(key))
      fail(ErrorKind::model_invalid, std::string("missing field: ") + key);
  if (!j["agent_dims"].is_array() || j["agent_dims"].empty())
    fail(ErrorKind::model_invalid, "agent_dims: expected non-empty array");
  for (const auto& d : j["agent_dims"]) {
    if (!d.is_number_integer() || d.get<long long>() <= 0)
      fail(ErrorKind::model_invalid, "agent_dims: entries must be positive integers");
    m.agent_dims.push_back(d.get<Index>());
  }
  m.H = detail::matrix_from_json(j["H"], "H");
  m.R = detail::matrix_from_json(j["R"], "R");
  if (!j.contains("J0") || j["J0"].is_null())
    m.J0 = Matrix::Zero(m.H.cols(), m.H.cols());
  else
    m.J0 = detail::matrix_from_json(j["J0"], "J0");
  m.U = detail::matrix_from_json(j["U"], "U");
  if (!j["G"].is_array())
    fail(ErrorKind::model_invalid, "G: expected array of matrices");
  for (size_t i = 0; i < j["G"].size(); ++i)
    m.G.push_back(detail::matrix_from_json(j["G"][i], "G[" + std::to_string(i) + "]"));
  m.validate();
  return m;
}

inline SystemModel load_model(const std::string& path) {
  return model_from_json(detail::parse_file(path));
}

inline void save_model(const SystemModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::invalid_input, "cannot write file: " + path);
  out << model_to_json(model).dump(2) << "\n";
}

}  // namespace privest
