#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hughston {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

// A ray representative in the ambient (n+1)-dimensional Hilbert space.
// Amplitudes are never normalized implicitly; every observable defined on
// states is invariant under z -> lambda*z.
class StateVector {
 public:
  explicit StateVector(CVec amplitudes) : amps_(std::move(amplitudes)) {
    if (amps_.size() == 0 || !(amps_.norm() > 0.0)) {
      throw std::invalid_argument("StateVector: the zero vector is not a state");
    }
  }

  StateVector(std::initializer_list<Complex> amplitudes)
      : StateVector(CVec(Eigen::Map<const CVec>(std::data(amplitudes),
                                                static_cast<Eigen::Index>(amplitudes.size())))) {}

  Eigen::Index dim() const { return amps_.size(); }
  const CVec& amps() const { return amps_; }

  double squared_norm() const { return amps_.squaredNorm(); }

  StateVector normalized() const { return StateVector(amps_ / amps_.norm()); }

 private:
  CVec amps_;
};

inline Complex inner(const StateVector& a, const StateVector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("inner: dimension mismatch");
  return a.amps().dot(b.amps());  // Eigen's dot conjugates the left argument
}

// Squared ray overlap |<a|b>|^2 / (<a|a><b|b>), the chart-free distance
// ingredient. Equals 1 iff a and b lie on the same ray.
inline double fidelity(const StateVector& a, const StateVector& b) {
  return std::norm(inner(a, b)) / (a.squared_norm() * b.squared_norm());
}

// Hermitian operator on the ambient space. Hermiticity is enforced on
// construction by averaging with the adjoint, so roundoff asymmetry in the
// input cannot leak into downstream expectations.
class HermitianOperator {
 public:
  explicit HermitianOperator(const CMat& entries) {
    if (entries.rows() != entries.cols()) {
      throw std::invalid_argument("HermitianOperator: matrix must be square");
    }
    mat_ = 0.5 * (entries + entries.adjoint().eval());
  }

  Eigen::Index dim() const { return mat_.rows(); }
  const CMat& mat() const { return mat_; }

  // Matrix square H*H, itself Hermitian.
  HermitianOperator squared() const { return HermitianOperator(mat_ * mat_); }

  static HermitianOperator identity(Eigen::Index dim) {
    return HermitianOperator(CMat::Identity(dim, dim));
  }

  static HermitianOperator diagonal(const RVec& values) {
    CMat m = CMat::Zero(values.size(), values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) m(i, i) = values(i);
    return HermitianOperator(m);
  }

 private:
  CMat mat_;
};

namespace detail {

inline void require_match(const HermitianOperator& f, const StateVector& z) {
  if (f.dim() != z.dim()) {
    throw std::invalid_argument("operator/state dimension mismatch: " +
                                std::to_string(f.dim()) + " vs " + std::to_string(z.dim()));
  }
}

// Expectation of an arbitrary (not necessarily Hermitian) matrix; complex.
inline Complex raw_expectation(const CMat& m, const StateVector& z) {
  return (z.amps().dot(m * z.amps())) / z.squared_norm();
}

// Real expectation of a Hermitian combination; the imaginary part is pure
// roundoff and is checked before being discarded.
inline double real_expectation(const CMat& m, const StateVector& z) {
  const Complex q = raw_expectation(m, z);
  const double scale = std::max(1.0, std::abs(q));
  if (std::abs(q.imag()) > 1e-12 * scale) {
    throw std::runtime_error("expectation: non-negligible imaginary part " +
                             std::to_string(q.imag()));
  }
  return q.real();
}

}  // namespace detail

// (F) = <z|F|z> / <z|z>
inline double expectation(const HermitianOperator& f, const StateVector& z) {
  detail::require_match(f, z);
  return detail::real_expectation(f.mat(), z);
}

// [dF]^2 = (F^2) - (F)^2, clamped at zero against roundoff.
inline double variance(const HermitianOperator& f, const StateVector& z) {
  detail::require_match(f, z);
  const double ef = detail::real_expectation(f.mat(), z);
  const double ef2 = detail::real_expectation((f.mat() * f.mat()).eval(), z);
  double v = ef2 - ef * ef;
  if (v < 0.0 && v > -1e-12 * std::max(1.0, std::abs(ef2))) v = 0.0;
  return v;
}

// ([F,[F,G]]) -- expectation of the double commutator, a Hermitian
// combination, expanded as FFG - 2FGF + GFF.
inline double double_commutator_expectation(const HermitianOperator& f,
                                            const HermitianOperator& g,
                                            const StateVector& z) {
  if (f.dim() != g.dim()) throw std::invalid_argument("double_commutator: dimension mismatch");
  detail::require_match(f, z);
  const CMat& fm = f.mat();
  const CMat& gm = g.mat();
  const CMat m = fm * fm * gm - 2.0 * (fm * gm * fm) + gm * fm * fm;
  return detail::real_expectation(m, z);
}

// |v><v| / <v|v>
inline HermitianOperator projector(const StateVector& v) {
  return HermitianOperator((v.amps() * v.amps().adjoint()) / v.squared_norm());
}

struct EigenDecomposition {
  RVec eigenvalues;   // ascending
  CMat eigenvectors;  // orthonormal columns, matching order
  std::vector<std::vector<int>> degeneracy_groups;

  StateVector eigenvector(int k) const { return StateVector(eigenvectors.col(k)); }

  // Projector onto the eigenspace spanned by one degeneracy group.
  HermitianOperator group_projector(int g) const {
    CMat p = CMat::Zero(eigenvectors.rows(), eigenvectors.rows());
    for (int k : degeneracy_groups[g]) {
      p += eigenvectors.col(k) * eigenvectors.col(k).adjoint();
    }
    return HermitianOperator(p);
  }
};

// Full spectral decomposition; eigenvalues closer than tau_degen are chained
// into one degeneracy group. tau_degen < 0 selects the default
// 1e-9 * (spectral range).
inline EigenDecomposition eigendecompose(const HermitianOperator& h, double tau_degen = -1.0) {
  Eigen::SelfAdjointEigenSolver<CMat> solver(h.mat());
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eigendecompose: solver failed to converge (dim " +
                             std::to_string(h.dim()) + ")");
  }
  EigenDecomposition d;
  d.eigenvalues = solver.eigenvalues();
  d.eigenvectors = solver.eigenvectors();

  const Eigen::Index n = d.eigenvalues.size();
  const double range = d.eigenvalues(n - 1) - d.eigenvalues(0);
  if (tau_degen < 0.0) tau_degen = 1e-9 * range;

  d.degeneracy_groups.push_back({0});
  for (Eigen::Index k = 1; k < n; ++k) {
    if (d.eigenvalues(k) - d.eigenvalues(k - 1) < tau_degen) {
      d.degeneracy_groups.back().push_back(static_cast<int>(k));
    } else {
      d.degeneracy_groups.push_back({static_cast<int>(k)});
    }
  }
  return d;
}

// Kronecker product of states; the leftmost factor varies slowest, i.e.
// (a (x) b)[i*dim_b + j] = a[i] * b[j]. This ordering is frozen and shared
// with embed_subsystem_operator.
inline StateVector tensor_state(const std::vector<StateVector>& parts) {
  if (parts.empty()) throw std::invalid_argument("tensor_state: empty factor list");
  CVec acc = parts.front().amps();
  for (std::size_t l = 1; l < parts.size(); ++l) {
    const CVec& b = parts[l].amps();
    CVec next(acc.size() * b.size());
    for (Eigen::Index i = 0; i < acc.size(); ++i) {
      next.segment(i * b.size(), b.size()) = acc(i) * b;
    }
    acc = std::move(next);
  }
  return StateVector(std::move(acc));
}

namespace detail {

inline CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

}  // namespace detail

// I (x) ... (x) H_slot (x) ... (x) I with the frozen tensor ordering.
inline HermitianOperator embed_subsystem_operator(const HermitianOperator& h, std::size_t slot,
                                                  const std::vector<Eigen::Index>& dims) {
  if (slot >= dims.size()) throw std::invalid_argument("embed_subsystem_operator: bad slot");
  if (h.dim() != dims[slot]) {
    throw std::invalid_argument("embed_subsystem_operator: operator dim " +
                                std::to_string(h.dim()) + " != dims[slot] " +
                                std::to_string(dims[slot]));
  }
  CMat acc = CMat::Identity(1, 1);
  for (std::size_t l = 0; l < dims.size(); ++l) {
    acc = detail::kron(acc, l == slot ? h.mat() : CMat::Identity(dims[l], dims[l]).eval());
  }
  return HermitianOperator(acc);
}

}  // namespace hughston
