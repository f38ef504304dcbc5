#pragma once

// Linear-quadratic mean-field model data: time-dependent coefficients of the
// controlled McKean-Vlasov dynamics
//   b  = b0 + B x + Bbar mu + C a
//   s  = theta + D x + Dbar mu + F a          (idiosyncratic diffusion)
//   so = theta_o + Do x + Dbar_o mu + Fo a    (common-noise diffusion)
// with rewards r = x'Mx + mu'Mbar mu + a'Ra + x'O and g = x'Px + mu'Pbar mu,
// discount fixed to zero. Coefficients are constants or piecewise-linear
// tables in t.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfcq/errors.hpp"
#include "mfcq/types.hpp"

namespace mfcq {

/// A matrix-valued coefficient, constant or tabulated with linear
/// interpolation between nodes (clamped outside the node range).
class Coefficient {
 public:
  Coefficient() = default;
  explicit Coefficient(Matrix constant) : values_{std::move(constant)} {}
  Coefficient(std::vector<double> times, std::vector<Matrix> values)
      : times_(std::move(times)), values_(std::move(values)) {
    if (times_.size() != values_.size() || times_.size() < 2)
      throw ConfigError("coefficient table needs matching t/v lists with >= 2 nodes");
    if (!std::is_sorted(times_.begin(), times_.end()))
      throw ConfigError("coefficient table times must be ascending");
  }

  static Coefficient zero(Eigen::Index rows, Eigen::Index cols) {
    return Coefficient(Matrix::Zero(rows, cols));
  }

  bool tabulated() const { return !times_.empty(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<Matrix>& values() const { return values_; }

  Eigen::Index rows() const { return values_.front().rows(); }
  Eigen::Index cols() const { return values_.front().cols(); }

  Matrix at(double t) const {
    if (!tabulated()) return values_.front();
    return lerp_nodes(times_, values_, t);
  }

  bool all_finite() const {
    for (const auto& v : values_)
      if (!v.allFinite()) return false;
    return true;
  }

 private:
  std::vector<double> times_;   // empty for constants
  std::vector<Matrix> values_;  // single entry for constants
};

/// All 16 time-sliced coefficient values.
struct CoefficientSlice {
  Vector b0, theta, theta_o, O;
  Matrix B, Bbar, C, D, Dbar, F, Do, Dbar_o, Fo, M, Mbar, R;
};

struct LQModel {
  int d = 1;  // state dimension
  int p = 1;  // action dimension (common/idiosyncratic noise dims are 1)
  double horizon = 1.0;
  double gamma = 1.0;  // entropy temperature; discount beta is fixed to 0

  Coefficient b0, B, Bbar, C, theta, D, Dbar, F;
  Coefficient theta_o, Do, Dbar_o, Fo;
  Coefficient M, Mbar, R, O;
  Matrix P, Pbar;

  /// Shape/symmetry/finiteness validation. Throws ConfigError.
  void validate() const;

  /// All coefficients evaluated at t. Throws ConfigError outside [0, horizon].
  CoefficientSlice coefficients_at(double t) const;

  double terminal_reward(const Vector& x, const Vector& mu_mean) const {
    return x.dot(P * x) + mu_mean.dot(Pbar * mu_mean);
  }

  double running_reward(const CoefficientSlice& c, const Vector& x, const Vector& mu_mean,
                        const Vector& a) const {
    return x.dot(c.M * x) + mu_mean.dot(c.Mbar * mu_mean) + a.dot(c.R * a) + x.dot(c.O);
  }
};

/// Per-condition semidefiniteness margins for the solvability condition (H).
/// A margin is -max_eig of the tested matrix (R is tested as R + delta I), so
/// margin >= 0 means the condition holds; the worst sampled t is recorded.
struct ConditionHReport {
  struct Entry {
    std::string name;
    double margin = 0.0;
    double worst_t = 0.0;
  };
  bool holds = false;
  double delta = 0.0;
  int t_samples = 0;
  std::vector<Entry> margins;

  std::string summary() const {
    std::ostringstream os;
    os << "condition (H) " << (holds ? "holds" : "FAILS") << " (delta=" << delta << ")\n";
    for (const auto& e : margins)
      os << "  " << e.name << ": margin " << e.margin << " at t=" << e.worst_t << "\n";
    return os.str();
  }
};

namespace detail {

inline void require_symmetric(const Matrix& m, const std::string& name) {
  if (!is_symmetric(m, 1e-12))
    throw ConfigError("coefficient " + name + " must be symmetric");
}

inline void require_shape(const Coefficient& c, Eigen::Index rows, Eigen::Index cols,
                          const std::string& name) {
  for (const auto& v : c.values())
    if (v.rows() != rows || v.cols() != cols)
      throw ConfigError("coefficient " + name + " has shape " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
}

}  // namespace detail

inline void LQModel::validate() const {
  if (d < 1 || p < 1) throw ConfigError("dims d and p must be >= 1");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");

  detail::require_shape(b0, d, 1, "b0");
  detail::require_shape(theta, d, 1, "theta");
  detail::require_shape(theta_o, d, 1, "theta_o");
  detail::require_shape(O, d, 1, "O");
  const std::pair<const Coefficient*, const char*> square[] = {
      {&B, "B"},   {&Bbar, "Bbar"},    {&D, "D"}, {&Dbar, "Dbar"},
      {&Do, "Do"}, {&Dbar_o, "Dbar_o"}, {&M, "M"}, {&Mbar, "Mbar"}};
  for (const auto& [c, nm] : square) detail::require_shape(*c, d, d, nm);
  detail::require_shape(C, d, p, "C");
  detail::require_shape(F, d, p, "F");
  detail::require_shape(Fo, d, p, "Fo");
  detail::require_shape(R, p, p, "R");
  if (P.rows() != d || P.cols() != d) throw ConfigError("terminal P has wrong shape");
  if (Pbar.rows() != d || Pbar.cols() != d) throw ConfigError("terminal Pbar has wrong shape");

  for (const auto& v : M.values()) detail::require_symmetric(v, "M");
  for (const auto& v : Mbar.values()) detail::require_symmetric(v, "Mbar");
  for (const auto& v : R.values()) detail::require_symmetric(v, "R");
  detail::require_symmetric(P, "P");
  detail::require_symmetric(Pbar, "Pbar");

  for (const auto* c : {&b0, &B, &Bbar, &C, &theta, &D, &Dbar, &F, &theta_o, &Do, &Dbar_o, &Fo,
                        &M, &Mbar, &R, &O})
    if (!c->all_finite()) throw ConfigError("model has non-finite coefficient entries");
  if (!P.allFinite() || !Pbar.allFinite()) throw ConfigError("terminal matrices must be finite");
}

inline CoefficientSlice LQModel::coefficients_at(double t) const {
  if (t < -1e-12 || t > horizon + 1e-12)
    throw ConfigError("time " + std::to_string(t) + " outside [0, " + std::to_string(horizon) +
                      "]");
  t = std::clamp(t, 0.0, horizon);
  CoefficientSlice s;
  s.b0 = b0.at(t);
  s.theta = theta.at(t);
  s.theta_o = theta_o.at(t);
  s.O = O.at(t);
  s.B = B.at(t);
  s.Bbar = Bbar.at(t);
  s.C = C.at(t);
  s.D = D.at(t);
  s.Dbar = Dbar.at(t);
  s.F = F.at(t);
  s.Do = Do.at(t);
  s.Dbar_o = Dbar_o.at(t);
  s.Fo = Fo.at(t);
  s.M = M.at(t);
  s.Mbar = Mbar.at(t);
  s.R = R.at(t);
  return s;
}

/// Checks P <= 0, P + Pbar <= 0, M(t) <= 0, M(t) + Mbar(t) <= 0 and
/// R(t) <= -delta I on a uniform t grid. Coefficients are piecewise linear,
/// so violations between grid nodes are bounded by node margins; the default
/// 201 samples make that gap negligible for smooth tables.
inline ConditionHReport validate_condition_h(const LQModel& model, double delta,
                                             int t_samples = 201) {
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
  if (t_samples < 2) throw ConfigError("t_samples must be >= 2");
  model.validate();

  ConditionHReport report;
  report.delta = delta;
  report.t_samples = t_samples;

  report.margins.push_back({"P", -max_eigenvalue(model.P), 0.0});
  report.margins.push_back({"P+Pbar", -max_eigenvalue(model.P + model.Pbar), 0.0});

  ConditionHReport::Entry m_entry{"M", std::numeric_limits<double>::infinity(), 0.0};
  ConditionHReport::Entry mm_entry{"M+Mbar", std::numeric_limits<double>::infinity(), 0.0};
  ConditionHReport::Entry r_entry{"R+delta*I", std::numeric_limits<double>::infinity(), 0.0};
  const Matrix eye_p = Matrix::Identity(model.p, model.p);
  for (int k = 0; k < t_samples; ++k) {
    double t = model.horizon * k / (t_samples - 1);
    Matrix mt = model.M.at(t);
    Matrix mbt = model.Mbar.at(t);
    Matrix rt = model.R.at(t);
    auto update = [t](ConditionHReport::Entry& e, double margin) {
      if (margin < e.margin) {
        e.margin = margin;
        e.worst_t = t;
      }
    };
    update(m_entry, -max_eigenvalue(mt));
    update(mm_entry, -max_eigenvalue(mt + mbt));
    update(r_entry, -max_eigenvalue(rt + delta * eye_p));
  }
  report.margins.push_back(m_entry);
  report.margins.push_back(mm_entry);
  report.margins.push_back(r_entry);

  report.holds = std::all_of(report.margins.begin(), report.margins.end(),
                             [](const auto& e) { return e.margin >= -1e-12; });
  return report;
}

// --- configuration document (JSON) ------------------------------------------

namespace detail {

using nlohmann::json;

inline Matrix parse_matrix(const json& j, Eigen::Index rows, Eigen::Index cols,
                           const std::string& name) {
  Matrix m(rows, cols);
  if (j.is_number()) {
    if (rows != 1 || cols != 1)
      throw ConfigError("coefficient " + name + ": scalar given for a " + std::to_string(rows) +
                        "x" + std::to_string(cols) + " matrix");
    m(0, 0) = j.get<double>();
    return m;
  }
  if (!j.is_array()) throw ConfigError("coefficient " + name + ": expected number or array");
  if (!j.empty() && j.front().is_array()) {
    if (static_cast<Eigen::Index>(j.size()) != rows)
      throw ConfigError("coefficient " + name + ": row count mismatch");
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto& row = j[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(row.size()) != cols)
        throw ConfigError("coefficient " + name + ": column count mismatch");
      for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)];
    }
    return m;
  }
  // flat array: a column vector
  if (cols != 1 || static_cast<Eigen::Index>(j.size()) != rows)
    throw ConfigError("coefficient " + name + ": flat array length mismatch");
  for (Eigen::Index i = 0; i < rows; ++i) m(i, 0) = j[static_cast<std::size_t>(i)];
  return m;
}

inline Matrix maybe_symmetrize(Matrix m, bool symmetric, const std::string& name) {
  if (!symmetric) return m;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError("coefficient " + name + " is not symmetric within 1e-12");
  return symmetrized(m);
}

inline Coefficient parse_coefficient(const json& coeffs, const std::string& name,
                                     Eigen::Index rows, Eigen::Index cols, bool symmetric) {
  if (!coeffs.contains(name)) return Coefficient::zero(rows, cols);
  const json& j = coeffs.at(name);
  if (j.is_object()) {
    if (!j.contains("t") || !j.contains("v"))
      throw ConfigError("coefficient " + name + ": table needs keys t and v");
    std::vector<double> ts = j.at("t").get<std::vector<double>>();
    std::vector<Matrix> vs;
    for (const auto& v : j.at("v"))
      vs.push_back(maybe_symmetrize(parse_matrix(v, rows, cols, name), symmetric, name));
    return Coefficient(std::move(ts), std::move(vs));
  }
  return Coefficient(maybe_symmetrize(parse_matrix(j, rows, cols, name), symmetric, name));
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

inline json coefficient_to_json(const Coefficient& c) {
  if (!c.tabulated()) return matrix_to_json(c.values().front());
  json v = json::array();
  for (const auto& m : c.values()) v.push_back(matrix_to_json(m));
  return json{{"t", c.times()}, {"v", v}};
}

}  // namespace detail

inline LQModel load_model(const std::string& text) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model document is not valid JSON: ") + e.what());
  }
  for (const auto* key : {"dims", "horizon", "gamma", "terminal"})
    if (!doc.contains(key)) throw ConfigError(std::string("missing required key: ") + key);
  if (!doc.at("dims").contains("d") || !doc.at("dims").contains("p"))
    throw ConfigError("dims must contain d and p");

  LQModel m;
  m.d = doc.at("dims").at("d").get<int>();
  m.p = doc.at("dims").at("p").get<int>();
  m.horizon = doc.at("horizon").get<double>();
  m.gamma = doc.at("gamma").get<double>();
  if (doc.contains("beta") && doc.at("beta").get<double>() != 0.0)
    throw ConfigError("discount beta is fixed to 0");

  const json coeffs = doc.contains("coeffs") ? doc.at("coeffs") : json::object();
  const Eigen::Index d = m.d, p = m.p;
  m.b0 = detail::parse_coefficient(coeffs, "b0", d, 1, false);
  m.B = detail::parse_coefficient(coeffs, "B", d, d, false);
  m.Bbar = detail::parse_coefficient(coeffs, "Bbar", d, d, false);
  m.C = detail::parse_coefficient(coeffs, "C", d, p, false);
  m.theta = detail::parse_coefficient(coeffs, "theta", d, 1, false);
  m.D = detail::parse_coefficient(coeffs, "D", d, d, false);
  m.Dbar = detail::parse_coefficient(coeffs, "Dbar", d, d, false);
  m.F = detail::parse_coefficient(coeffs, "F", d, p, false);
  m.theta_o = detail::parse_coefficient(coeffs, "theta_o", d, 1, false);
  m.Do = detail::parse_coefficient(coeffs, "Do", d, d, false);
  m.Dbar_o = detail::parse_coefficient(coeffs, "Dbar_o", d, d, false);
  m.Fo = detail::parse_coefficient(coeffs, "Fo", d, p, false);
  m.M = detail::parse_coefficient(coeffs, "M", d, d, true);
  m.Mbar = detail::parse_coefficient(coeffs, "Mbar", d, d, true);
  m.R = detail::parse_coefficient(coeffs, "R", p, p, true);
  m.O = detail::parse_coefficient(coeffs, "O", d, 1, false);

  const json& term = doc.at("terminal");
  if (!term.contains("P")) throw ConfigError("terminal must contain P");
  m.P = detail::maybe_symmetrize(detail::parse_matrix(term.at("P"), d, d, "P"), true, "P");
  m.Pbar = term.contains("Pbar")
               ? detail::maybe_symmetrize(detail::parse_matrix(term.at("Pbar"), d, d, "Pbar"),
                                          true, "Pbar")
               : Matrix::Zero(d, d);

  m.validate();
  return m;
}

inline LQModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

inline std::string serialize(const LQModel& m) {
  using detail::json;
  json doc;
  doc["dims"] = {{"d", m.d}, {"p", m.p}};
  doc["horizon"] = m.horizon;
  doc["gamma"] = m.gamma;
  json coeffs;
  coeffs["b0"] = detail::coefficient_to_json(m.b0);
  coeffs["B"] = detail::coefficient_to_json(m.B);
  coeffs["Bbar"] = detail::coefficient_to_json(m.Bbar);
  coeffs["C"] = detail::coefficient_to_json(m.C);
  coeffs["theta"] = detail::coefficient_to_json(m.theta);
  coeffs["D"] = detail::coefficient_to_json(m.D);
  coeffs["Dbar"] = detail::coefficient_to_json(m.Dbar);
  coeffs["F"] = detail::coefficient_to_json(m.F);
  coeffs["theta_o"] = detail::coefficient_to_json(m.theta_o);
  coeffs["Do"] = detail::coefficient_to_json(m.Do);
  coeffs["Dbar_o"] = detail::coefficient_to_json(m.Dbar_o);
  coeffs["Fo"] = detail::coefficient_to_json(m.Fo);
  coeffs["M"] = detail::coefficient_to_json(m.M);
  coeffs["Mbar"] = detail::coefficient_to_json(m.Mbar);
  coeffs["R"] = detail::coefficient_to_json(m.R);
  coeffs["O"] = detail::coefficient_to_json(m.O);
  doc["coeffs"] = coeffs;
  doc["terminal"] = {{"P", detail::matrix_to_json(m.P)}, {"Pbar", detail::matrix_to_json(m.Pbar)}};
  return doc.dump(2);
}

}  // namespace mfcq
