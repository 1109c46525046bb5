#pragma once

#include "hughston/operator_algebra.hpp"

#include <cmath>
#include <stdexcept>

namespace hughston {

// Raised when the pivot amplitude is too small to divide out; callers should
// re-pivot via best_pivot and retry.
class ChartError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inhomogeneous chart coordinates on projective Hilbert space: the amplitude
// at `pivot` is divided out and the remaining n ratios t^j (ambient indices in
// ascending order) are packed as x = (Re t^1, Im t^1, Re t^2, Im t^2, ...).
struct ProjectivePoint {
  RVec x;    // 2n real coordinates
  int pivot; // ambient index divided out, 0..n

  Eigen::Index chart_dim() const { return x.size(); }
  Eigen::Index ambient_dim() const { return x.size() / 2 + 1; }

  Complex t(Eigen::Index j) const { return {x(2 * j), x(2 * j + 1)}; }

  // 1 + sum |t|^2 -- the squared norm of the chart representative.
  double representative_norm_sq() const { return 1.0 + x.squaredNorm(); }
};

inline int best_pivot(const StateVector& z) {
  int arg = 0;
  double best = std::norm(z.amps()(0));
  for (Eigen::Index k = 1; k < z.dim(); ++k) {
    const double m = std::norm(z.amps()(k));
    if (m > best) {
      best = m;
      arg = static_cast<int>(k);
    }
  }
  return arg;
}

inline ProjectivePoint chart_encode(const StateVector& z, int pivot) {
  const Eigen::Index dim = z.dim();
  if (pivot < 0 || pivot >= dim) throw std::invalid_argument("chart_encode: pivot out of range");
  const double max_mod = z.amps().cwiseAbs().maxCoeff();
  const Complex zp = z.amps()(pivot);
  if (std::abs(zp) <= 1e-8 * max_mod) {
    throw ChartError("chart_encode: pivot amplitude too small, re-pivot required");
  }
  ProjectivePoint p;
  p.pivot = pivot;
  p.x.resize(2 * (dim - 1));
  Eigen::Index j = 0;
  for (Eigen::Index k = 0; k < dim; ++k) {
    if (k == pivot) continue;
    const Complex t = z.amps()(k) / zp;
    p.x(2 * j) = t.real();
    p.x(2 * j + 1) = t.imag();
    ++j;
  }
  return p;
}

// The unnormalized chart representative: amplitude 1 at the pivot, t^j at the
// non-pivot indices. Gradient formulas below are written for exactly this
// representative.
inline CVec chart_representative(const ProjectivePoint& p) {
  CVec w(p.ambient_dim());
  Eigen::Index j = 0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (k == p.pivot) {
      w(k) = 1.0;
    } else {
      w(k) = p.t(j);
      ++j;
    }
  }
  return w;
}

inline StateVector chart_decode(const ProjectivePoint& p) {
  CVec w = chart_representative(p);
  return StateVector(w / w.norm());
}

// The symplectic pairing tensor omega: +1 at (2j-1,2j), -1 at (2j,2j-1) in
// 1-based indices, acting within each (Re, Im) coordinate pair.
inline RMat omega_matrix(Eigen::Index chart_dim) {
  RMat w = RMat::Zero(chart_dim, chart_dim);
  for (Eigen::Index j = 0; j < chart_dim / 2; ++j) {
    w(2 * j, 2 * j + 1) = 1.0;
    w(2 * j + 1, 2 * j) = -1.0;
  }
  return w;
}

// (omega v)_a = omega_{ab} v_b
inline RVec omega_apply(const RVec& v) {
  RVec out(v.size());
  for (Eigen::Index j = 0; j < v.size() / 2; ++j) {
    out(2 * j) = v(2 * j + 1);
    out(2 * j + 1) = -v(2 * j);
  }
  return out;
}

struct MetricBundle {
  RMat g;            // g_ab, symmetric positive definite
  RMat g_inv;        // g^ab
  RMat omega_upper;  // Omega^ab = g^ac omega_cb, antisymmetric
  ProjectivePoint evaluated_at;
};

// Fubini-Study metric, inverse, and raised complex structure in the chart.
// The complex structure J_a^b equals omega_ab identically in this holomorphic
// chart (constant across the chart, not only at the origin); the identity
// checks in identity_oracle validate that choice at generic points.
inline MetricBundle fubini_study_metric(const ProjectivePoint& p) {
  const Eigen::Index m = p.chart_dim();
  const RVec& x = p.x;
  const RVec y = omega_apply(x);
  const double s = 1.0 + x.squaredNorm();

  MetricBundle b;
  b.evaluated_at = p;
  b.g = (4.0 / (s * s)) * (s * RMat::Identity(m, m) - x * x.transpose() - y * y.transpose());
  b.g_inv = 0.25 * s * (RMat::Identity(m, m) + x * x.transpose() + y * y.transpose());
  b.g = 0.5 * (b.g + b.g.transpose().eval());
  b.g_inv = 0.5 * (b.g_inv + b.g_inv.transpose().eval());
  RMat omu = b.g_inv * omega_matrix(m);
  b.omega_upper = 0.5 * (omu - omu.transpose().eval());
  return b;
}

// g^ab v_b without forming the matrix: g^ = (s/4)(I + x x^T + y y^T), y = omega x.
inline RVec metric_inverse_apply(const ProjectivePoint& p, const RVec& v) {
  const RVec& x = p.x;
  const RVec y = omega_apply(x);
  const double s = 1.0 + x.squaredNorm();
  return 0.25 * s * (v + x * x.dot(v) + y * y.dot(v));
}

namespace detail {

// d(F)/d tbar^j for the chart representative w (w^pivot held fixed at 1).
// From <w|w> d(F)/d wbar^a = (Fw)_a - (F) w_a restricted to non-pivot indices.
inline CVec dbar_gradient(const ProjectivePoint& p, const CVec& w, const CVec& fw) {
  const double s = w.squaredNorm();
  const double ef = (w.dot(fw)).real() / s;
  CVec d(p.chart_dim() / 2);
  Eigen::Index j = 0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (k == p.pivot) continue;
    d(j++) = (fw(k) - ef * w(k)) / s;
  }
  return d;
}

// Real-coordinate packing of a holomorphic/antiholomorphic derivative pair:
// d/dx^{2j-1} = 2 Re(d/dtbar), d/dx^{2j} = 2 Im(d/dtbar) for a real scalar.
inline RVec pack_gradient(const CVec& dbar) {
  RVec g(2 * dbar.size());
  for (Eigen::Index j = 0; j < dbar.size(); ++j) {
    g(2 * j) = 2.0 * dbar(j).real();
    g(2 * j + 1) = 2.0 * dbar(j).imag();
  }
  return g;
}

}  // namespace detail

// Covariant gradient nabla_a (F) in chart coordinates (for a scalar this is
// the partial derivative).
inline RVec expectation_gradient(const HermitianOperator& f, const ProjectivePoint& p) {
  if (f.dim() != p.ambient_dim()) {
    throw std::invalid_argument("expectation_gradient: dimension mismatch");
  }
  const CVec w = chart_representative(p);
  const CVec fw = f.mat() * w;
  return detail::pack_gradient(detail::dbar_gradient(p, w, fw));
}

// nabla^a (F) = g^ab nabla_b (F)
inline RVec raised_gradient(const HermitianOperator& f, const ProjectivePoint& p) {
  return metric_inverse_apply(p, expectation_gradient(f, p));
}

// nabla_a V = nabla_a (H^2) - 2 (H) nabla_a (H)
inline RVec variance_gradient(const HermitianOperator& h, const ProjectivePoint& p) {
  if (h.dim() != p.ambient_dim()) {
    throw std::invalid_argument("variance_gradient: dimension mismatch");
  }
  const CVec w = chart_representative(p);
  const double s = w.squaredNorm();
  const CVec hw = h.mat() * w;
  const CVec h2w = h.mat() * hw;
  const double eh = w.dot(hw).real() / s;
  const RVec grad_h = detail::pack_gradient(detail::dbar_gradient(p, w, hw));
  const RVec grad_h2 = detail::pack_gradient(detail::dbar_gradient(p, w, h2w));
  return grad_h2 - 2.0 * eh * grad_h;
}

}  // namespace hughston
