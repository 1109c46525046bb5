#pragma once

#include "hughston/identity_oracle.hpp"
#include "hughston/operator_algebra.hpp"
#include "hughston/projective_geometry.hpp"
#include "hughston/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hughston {

struct SdeConfig {
  double sigma = 1.0;    // stochastic coupling strength
  double dt = 1e-4;
  double t_final = 50.0;
  double chart_switch_threshold = 4.0;  // re-pivot when 1 + sum|t|^2 exceeds this
  double collapse_v_tol = 1e-6;
  double projector_dominance = 0.99;    // second collapse criterion: max (Pi_e)
  std::uint64_t seed = 0;
  int record_stride = 10;               // observables every k-th step
  bool record_states = false;
  bool record_increments = false;
  bool stop_on_collapse = true;         // freeze the record once classified

  long n_steps() const { return std::lround(t_final / dt); }

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("SdeConfig: sigma must be >= 0");
    if (!(dt > 0.0)) throw std::invalid_argument("SdeConfig: dt must be > 0");
    if (!(t_final > dt)) throw std::invalid_argument("SdeConfig: t_final must exceed dt");
    if (!(chart_switch_threshold >= 2.0)) {
      throw std::invalid_argument("SdeConfig: chart_switch_threshold must be >= 2");
    }
    if (!(collapse_v_tol > 0.0)) throw std::invalid_argument("SdeConfig: collapse_V_tol must be > 0");
    if (record_stride < 1) throw std::invalid_argument("SdeConfig: record_stride must be >= 1");
  }
};

constexpr int kUnresolved = -1;

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<StateVector> states;        // only if record_states
  std::vector<double> energy_expect;      // (H)
  std::vector<double> variance;           // V
  RMat projector_expect;                  // rows: recorded steps, cols: eigengroups
  std::vector<int> pivots;                // chart pivot at each recorded step
  std::vector<double> wiener_increments;  // only if record_increments
  int outcome = kUnresolved;              // eigengroup index, or kUnresolved
};

// Numerical blowup during integration; carries the last finite state seen.
class BlowupError : public std::runtime_error {
 public:
  BlowupError(long step, StateVector last_good)
      : std::runtime_error("sde_engine: non-finite coordinates at step " + std::to_string(step)),
        step(step),
        last_good_state(std::move(last_good)) {}

  long step;
  StateVector last_good_state;
};

// Drift of Eq. dx^a = [2 Omega^ab nabla_b(H) - (1/4) sigma^2 nabla^a V] dt + ...
inline RVec drift_vector(const HermitianOperator& h, const ProjectivePoint& p, double sigma) {
  const RVec grad_h = expectation_gradient(h, p);
  const RVec grad_v = variance_gradient(h, p);
  return 2.0 * metric_inverse_apply(p, omega_apply(grad_h)) -
         0.25 * sigma * sigma * metric_inverse_apply(p, grad_v);
}

// sigma nabla^a (H), the coefficient of dW.
inline RVec diffusion_vector(const HermitianOperator& h, const ProjectivePoint& p, double sigma) {
  return sigma * metric_inverse_apply(p, expectation_gradient(h, p));
}

// Ito connection correction -1/2 Gamma^a_bc s^b s^c for the diffusion vector
// s = sigma nabla^a(H). Integrating the drift-diffusion pair in a chart is
// only chart-covariant (and only makes the commuting-observable expectations
// true martingales) with this term included; the Fubini-Study connection in
// the holomorphic chart contracts in closed form,
//   Gamma^j_kl = -(delta^j_k tbar_l + delta^j_l tbar_k) / (1 + |t|^2),
// so the correction per complex coordinate is  zeta^j (zeta . tbar) / (1+|t|^2)
// with zeta the complex packing of s.
inline RVec ito_connection_correction(const HermitianOperator& h, const ProjectivePoint& p,
                                      double sigma) {
  const RVec s = diffusion_vector(h, p, sigma);
  const Eigen::Index n = s.size() / 2;
  Complex dot{0.0, 0.0};
  for (Eigen::Index j = 0; j < n; ++j) {
    dot += Complex(s(2 * j), s(2 * j + 1)) * std::conj(p.t(j));
  }
  dot /= p.representative_norm_sq();
  RVec out(s.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    const Complex c = Complex(s(2 * j), s(2 * j + 1)) * dot;
    out(2 * j) = c.real();
    out(2 * j + 1) = c.imag();
  }
  return out;
}

// Drift mu of a scalar observable (G) along the flow:
//   mu = 2 Omega^ab nabla_a(G) nabla_b(H) - (1/4) sigma^2 nabla^a V nabla_a(G)
//        + (1/2) sigma^2 nabla^a(H) nabla^b(H) nabla_a nabla_b (G)
inline double scalar_drift(const HermitianOperator& g, const HermitianOperator& h,
                           const ProjectivePoint& p, double sigma) {
  const RVec grad_g = expectation_gradient(g, p);
  const RVec grad_h = expectation_gradient(h, p);
  const RVec grad_v = variance_gradient(h, p);
  const double s2 = sigma * sigma;
  return 2.0 * grad_g.dot(metric_inverse_apply(p, omega_apply(grad_h))) -
         0.25 * s2 * grad_g.dot(metric_inverse_apply(p, grad_v)) +
         0.5 * s2 * hessian_contraction(h, g, p);
}

// Euler-Maruyama stepper with preallocated workspace. A single instance is
// not thread-safe; use one per trajectory.
class SdeIntegrator {
 public:
  SdeIntegrator(const HermitianOperator& h, const SdeConfig& cfg)
      : h_(h.mat()), cfg_(cfg), dim_(h.dim()), m_(2 * (h.dim() - 1)) {
    cfg_.validate();
    w_.resize(dim_);
    hw_.resize(dim_);
    h2w_.resize(dim_);
    grad_h_.resize(m_);
    grad_v_.resize(m_);
    vel_.resize(m_);
    tmp_.resize(m_);
  }

  const SdeConfig& config() const { return cfg_; }

  // One step of  x += drift*dt + diffusion*dW, re-pivoting if the chart
  // representative grows past the switch threshold.
  void advance(ProjectivePoint& p, double dw) {
    const RVec& x = p.x;

    // chart representative and H, H^2 applied to it
    Eigen::Index j = 0;
    for (Eigen::Index k = 0; k < dim_; ++k) {
      if (k == p.pivot) {
        w_(k) = 1.0;
      } else {
        w_(k) = Complex(x(2 * j), x(2 * j + 1));
        ++j;
      }
    }
    hw_.noalias() = h_ * w_;
    h2w_.noalias() = h_ * hw_;

    const double s = w_.squaredNorm();
    const double eh = w_.dot(hw_).real() / s;
    const double eh2 = w_.dot(h2w_).real() / s;

    // gradients of (H) and of V = (H^2) - (H)^2 in the chart
    j = 0;
    for (Eigen::Index k = 0; k < dim_; ++k) {
      if (k == p.pivot) continue;
      const Complex dbar_h = (hw_(k) - eh * w_(k)) / s;
      const Complex dbar_h2 = (h2w_(k) - eh2 * w_(k)) / s;
      grad_h_(2 * j) = 2.0 * dbar_h.real();
      grad_h_(2 * j + 1) = 2.0 * dbar_h.imag();
      grad_v_(2 * j) = 2.0 * dbar_h2.real() - 2.0 * eh * grad_h_(2 * j);
      grad_v_(2 * j + 1) = 2.0 * dbar_h2.imag() - 2.0 * eh * grad_h_(2 * j + 1);
      ++j;
    }

    // vel = dt * [2 g^(omega grad_h) - sigma^2/4 g^ grad_v] + dw * sigma g^ grad_h
    const double s2 = cfg_.sigma * cfg_.sigma;
    apply_omega(grad_h_, tmp_);
    apply_metric_inverse(p, tmp_, vel_);
    vel_ *= 2.0 * cfg_.dt;
    apply_metric_inverse(p, grad_v_, tmp_);
    vel_ -= (0.25 * s2 * cfg_.dt) * tmp_;
    apply_metric_inverse(p, grad_h_, tmp_);
    tmp_ *= cfg_.sigma;  // diffusion vector

    // connection correction keeping the chart integration covariant
    Complex dot{0.0, 0.0};
    for (Eigen::Index jj = 0; jj < m_ / 2; ++jj) {
      dot += Complex(tmp_(2 * jj), tmp_(2 * jj + 1)) * Complex(x(2 * jj), -x(2 * jj + 1));
    }
    dot *= cfg_.dt / s_chart(p);
    for (Eigen::Index jj = 0; jj < m_ / 2; ++jj) {
      const Complex c = Complex(tmp_(2 * jj), tmp_(2 * jj + 1)) * dot;
      vel_(2 * jj) += c.real();
      vel_(2 * jj + 1) += c.imag();
    }

    vel_ += dw * tmp_;

    p.x += vel_;

    if (p.representative_norm_sq() > cfg_.chart_switch_threshold) {
      repivot(p);
    }
  }

  static void repivot(ProjectivePoint& p) {
    const StateVector z = chart_decode(p);
    p = chart_encode(z, best_pivot(z));
  }

 private:
  static double s_chart(const ProjectivePoint& p) { return 1.0 + p.x.squaredNorm(); }

  static void apply_omega(const RVec& v, RVec& out) {
    for (Eigen::Index j = 0; j < v.size() / 2; ++j) {
      out(2 * j) = v(2 * j + 1);
      out(2 * j + 1) = -v(2 * j);
    }
  }

  void apply_metric_inverse(const ProjectivePoint& p, const RVec& v, RVec& out) const {
    const RVec& x = p.x;
    const double s = 1.0 + x.squaredNorm();
    double xv = 0.0, yv = 0.0;  // x.v and (omega x).v
    for (Eigen::Index j = 0; j < m_ / 2; ++j) {
      xv += x(2 * j) * v(2 * j) + x(2 * j + 1) * v(2 * j + 1);
      yv += x(2 * j + 1) * v(2 * j) - x(2 * j) * v(2 * j + 1);
    }
    for (Eigen::Index j = 0; j < m_ / 2; ++j) {
      out(2 * j) = 0.25 * s * (v(2 * j) + x(2 * j) * xv + x(2 * j + 1) * yv);
      out(2 * j + 1) = 0.25 * s * (v(2 * j + 1) + x(2 * j + 1) * xv - x(2 * j) * yv);
    }
  }

  CMat h_;
  SdeConfig cfg_;
  Eigen::Index dim_;
  Eigen::Index m_;
  CVec w_, hw_, h2w_;
  RVec grad_h_, grad_v_, vel_, tmp_;
};

// Single Euler-Maruyama update as a pure function (convenience wrapper; the
// trajectory loop uses SdeIntegrator directly).
inline ProjectivePoint step(const ProjectivePoint& p, const HermitianOperator& h,
                            const SdeConfig& cfg, double dw) {
  SdeIntegrator integ(h, cfg);
  ProjectivePoint q = p;
  integ.advance(q, dw);
  return q;
}

namespace detail {

struct Observables {
  double energy;
  double variance;
  RVec projector_expect;  // per eigengroup
};

// All observables from the eigenbasis amplitudes of the normalized state.
inline Observables observe(const EigenDecomposition& eig, const StateVector& z) {
  const CVec a = eig.eigenvectors.adjoint() * z.amps();
  const double nrm = a.squaredNorm();
  Observables obs;
  obs.projector_expect = RVec::Zero(static_cast<Eigen::Index>(eig.degeneracy_groups.size()));
  double eh = 0.0, eh2 = 0.0;
  for (std::size_t g = 0; g < eig.degeneracy_groups.size(); ++g) {
    for (int k : eig.degeneracy_groups[g]) {
      const double pk = std::norm(a(k)) / nrm;
      obs.projector_expect(static_cast<Eigen::Index>(g)) += pk;
      eh += eig.eigenvalues(k) * pk;
      eh2 += eig.eigenvalues(k) * eig.eigenvalues(k) * pk;
    }
  }
  obs.energy = eh;
  obs.variance = std::max(0.0, eh2 - eh * eh);
  return obs;
}

// Core trajectory loop. `noise(k)` returns the Wiener increment dW for step
// k; it must be Normal(0, dt) distributed.
template <class NoiseFn>
TrajectoryRecord evolve_impl(const StateVector& z0, const HermitianOperator& h,
                             const EigenDecomposition& eig, const SdeConfig& cfg,
                             NoiseFn&& noise) {
  cfg.validate();
  if (z0.dim() != h.dim()) throw std::invalid_argument("evolve: dimension mismatch");

  const long n_steps = cfg.n_steps();
  SdeIntegrator integ(h, cfg);
  ProjectivePoint p = chart_encode(z0, best_pivot(z0));

  TrajectoryRecord rec;
  const std::size_t n_groups = eig.degeneracy_groups.size();
  std::vector<double> proj_rows;  // row-major staging for projector_expect

  bool frozen = false;
  StateVector z = chart_decode(p);
  Observables obs = observe(eig, z);

  auto record = [&](double t) {
    rec.times.push_back(t);
    rec.energy_expect.push_back(obs.energy);
    rec.variance.push_back(obs.variance);
    rec.pivots.push_back(p.pivot);
    for (Eigen::Index g = 0; g < obs.projector_expect.size(); ++g) {
      proj_rows.push_back(obs.projector_expect(g));
    }
    if (cfg.record_states) rec.states.push_back(z);
  };

  auto classify = [&]() {
    Eigen::Index gmax;
    const double pmax = obs.projector_expect.maxCoeff(&gmax);
    if (obs.variance < cfg.collapse_v_tol && pmax > cfg.projector_dominance) {
      rec.outcome = static_cast<int>(gmax);
      if (cfg.stop_on_collapse) frozen = true;
    }
  };

  classify();
  record(0.0);

  for (long k = 0; k < n_steps && !frozen; ++k) {
    const double dw = noise(k);
    if (cfg.record_increments) rec.wiener_increments.push_back(dw);
    integ.advance(p, dw);

    const bool at_record = ((k + 1) % cfg.record_stride == 0) || (k + 1 == n_steps);
    if (!at_record) continue;

    if (!p.x.allFinite()) throw BlowupError(k + 1, z);
    z = chart_decode(p);
    obs = observe(eig, z);
    if (rec.outcome == kUnresolved) classify();
    record((k + 1) * cfg.dt);
  }

  // pad the series with the frozen fixed point so every record spans the
  // same time grid
  if (frozen) {
    for (long k = 1; k <= n_steps; ++k) {
      const bool at_record = (k % cfg.record_stride == 0) || (k == n_steps);
      if (at_record && k * cfg.dt > rec.times.back()) record(k * cfg.dt);
    }
  }

  rec.projector_expect = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                        Eigen::RowMajor>>(
      proj_rows.data(), static_cast<Eigen::Index>(rec.times.size()),
      static_cast<Eigen::Index>(n_groups));
  return rec;
}

}  // namespace detail

// Integrate one trajectory with a fresh Wiener stream keyed by
// (cfg.seed, trajectory_index).
inline TrajectoryRecord evolve(const StateVector& z0, const HermitianOperator& h,
                               const EigenDecomposition& eig, const SdeConfig& cfg,
                               std::uint64_t trajectory_index = 0) {
  RngStream rng = make_stream(cfg.seed, trajectory_index);
  const double sqrt_dt = std::sqrt(cfg.dt);
  return detail::evolve_impl(z0, h, eig, cfg,
                             [&](long) { return gaussian(rng, sqrt_dt); });
}

inline TrajectoryRecord evolve(const StateVector& z0, const HermitianOperator& h,
                               const SdeConfig& cfg, std::uint64_t trajectory_index = 0) {
  return evolve(z0, h, eigendecompose(h), cfg, trajectory_index);
}

// Integrate replaying a fixed increment sequence; used to drive several
// systems with one shared Wiener process.
inline TrajectoryRecord evolve_replay(const StateVector& z0, const HermitianOperator& h,
                                      const EigenDecomposition& eig, const SdeConfig& cfg,
                                      const std::vector<double>& increments) {
  if (static_cast<long>(increments.size()) < cfg.n_steps()) {
    throw std::invalid_argument("evolve_replay: increment sequence shorter than n_steps");
  }
  return detail::evolve_impl(z0, h, eig, cfg,
                             [&](long k) { return increments[static_cast<std::size_t>(k)]; });
}

}  // namespace hughston
