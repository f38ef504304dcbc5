#pragma once

// Plain CSV writers. Values are printed with %.17g so that reruns of the
// same configuration reproduce output files byte-for-byte.

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "mfcq/policy.hpp"
#include "mfcq/riccati.hpp"
#include "mfcq/types.hpp"

namespace mfcq::csv {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void append_matrix_header(std::string& line, const std::string& name, Eigen::Index rows,
                                 Eigen::Index cols) {
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      line += "," + name + "[" + std::to_string(i) + "][" + std::to_string(j) + "]";
}

inline void append_matrix(std::string& line, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) line += "," + fmt(m(i, j));
}

inline void append_vector(std::string& line, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) line += "," + fmt(v[i]);
}

inline void write_solution(const QuadraticValueSolution& sol, std::ostream& os) {
  const Eigen::Index d = sol.lambda.front().rows();
  std::string header = "t";
  append_matrix_header(header, "Lambda", d, d);
  append_matrix_header(header, "Gamma", d, d);
  for (Eigen::Index i = 0; i < d; ++i) header += ",zeta[" + std::to_string(i) + "]";
  header += ",chi";
  const bool with_blocks = sol.blocks.size() == sol.times.size();
  if (with_blocks) {
    const Eigen::Index p = sol.blocks.front().U.rows();
    append_matrix_header(header, "U", p, p);
    append_matrix_header(header, "V", p, p);
    append_matrix_header(header, "S", p, d);
    append_matrix_header(header, "Z", p, d);
    for (Eigen::Index i = 0; i < p; ++i) header += ",Y[" + std::to_string(i) + "]";
  }
  os << header << "\n";
  for (std::size_t n = 0; n < sol.times.size(); ++n) {
    std::string line = fmt(sol.times[n]);
    append_matrix(line, sol.lambda[n]);
    append_matrix(line, sol.gamma[n]);
    append_vector(line, sol.zeta[n]);
    line += "," + fmt(sol.chi[n]);
    if (with_blocks) {
      append_matrix(line, sol.blocks[n].U);
      append_matrix(line, sol.blocks[n].V);
      append_matrix(line, sol.blocks[n].S);
      append_matrix(line, sol.blocks[n].Z);
      append_vector(line, sol.blocks[n].Y);
    }
    os << line << "\n";
  }
}

inline void write_policy(const GaussianPolicy& policy, std::ostream& os) {
  const Eigen::Index d = policy.state_dim();
  const Eigen::Index p = policy.action_dim();
  std::string header = "t";
  append_matrix_header(header, "K", p, d);
  append_matrix_header(header, "Kbar", p, d);
  for (Eigen::Index i = 0; i < p; ++i) header += ",K0[" + std::to_string(i) + "]";
  append_matrix_header(header, "Sigma", p, p);
  os << header << "\n";
  for (std::size_t n = 0; n < policy.times().size(); ++n) {
    std::string line = fmt(policy.times()[n]);
    append_matrix(line, policy.k_nodes()[n]);
    append_matrix(line, policy.kbar_nodes()[n]);
    append_vector(line, policy.k0_nodes()[n]);
    append_matrix(line, policy.sigma_nodes()[n]);
    os << line << "\n";
  }
}

inline void write_tabular(const TabularPolicy& policy, std::ostream& os) {
  std::string header = "state_node";
  const Eigen::Index d = policy.states().front().size();
  const Eigen::Index p = policy.actions().front().size();
  for (Eigen::Index i = 0; i < d; ++i) header += ",x[" + std::to_string(i) + "]";
  for (Eigen::Index i = 0; i < p; ++i) header += ",a[" + std::to_string(i) + "]";
  header += ",density";
  os << header << "\n";
  for (std::size_t g = 0; g < policy.states().size(); ++g)
    for (std::size_t j = 0; j < policy.actions().size(); ++j) {
      std::string line = std::to_string(g);
      append_vector(line, policy.states()[g]);
      append_vector(line, policy.actions()[j]);
      line += "," + fmt(policy.density()(static_cast<Eigen::Index>(g),
                                         static_cast<Eigen::Index>(j)));
      os << line << "\n";
    }
}

}  // namespace mfcq::csv
