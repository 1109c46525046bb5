#pragma once

#include "hughston/operator_algebra.hpp"
#include "hughston/sde_engine.hpp"
#include "hughston/stats.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hughston {

// Initial-state quantum probabilities per degeneracy group,
// p_g = sum_{e in g} |<e|z0>|^2 / <z0|z0>.
inline std::vector<double> born_probabilities(const StateVector& z0,
                                              const EigenDecomposition& eig) {
  if (z0.dim() != eig.eigenvectors.rows()) {
    throw std::invalid_argument("born_probabilities: dimension mismatch");
  }
  const CVec a = eig.eigenvectors.adjoint() * z0.amps();
  const double nrm = a.squaredNorm();
  std::vector<double> p(eig.degeneracy_groups.size(), 0.0);
  for (std::size_t g = 0; g < eig.degeneracy_groups.size(); ++g) {
    for (int k : eig.degeneracy_groups[g]) p[g] += std::norm(a(k)) / nrm;
  }
  return p;
}

struct EnsembleStats {
  long n_traj = 0;
  double sigma = 0.0;
  double initial_energy = 0.0;             // (H) of z0, exact
  std::vector<double> born_probs;          // p_g, from the initial state only
  std::vector<long> outcome_counts;        // resolved collapses per group
  std::vector<double> outcome_freqs;       // counts / n_traj
  long unresolved_count = 0;
  long blowup_count = 0;

  std::vector<double> times;
  std::vector<RunningMoments> v_series;    // E[V_t]
  std::vector<RunningMoments> h_series;    // E[(H)_t]
  std::vector<std::vector<RunningMoments>> pi_series;  // [time][group]

  double chi2 = 0.0;
  int chi2_dof = 0;
  double chi2_pvalue = 1.0;

  long resolved_count() const {
    long r = 0;
    for (long c : outcome_counts) r += c;
    return r;
  }
};

namespace detail {

struct BlockAccumulator {
  std::vector<RunningMoments> v, h;
  std::vector<std::vector<RunningMoments>> pi;
  std::vector<long> outcomes;
  long unresolved = 0;
  long blowups = 0;
  long first_blowup_index = -1;
  std::string first_blowup_what;

  void init(std::size_t n_times, std::size_t n_groups) {
    v.resize(n_times);
    h.resize(n_times);
    pi.assign(n_times, std::vector<RunningMoments>(n_groups));
    outcomes.assign(n_groups, 0);
  }

  void add(const TrajectoryRecord& rec) {
    for (std::size_t i = 0; i < rec.times.size(); ++i) {
      v[i].add(rec.variance[i]);
      h[i].add(rec.energy_expect[i]);
      for (std::size_t g = 0; g < pi[i].size(); ++g) {
        pi[i][g].add(rec.projector_expect(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(g)));
      }
    }
    if (rec.outcome == kUnresolved) {
      ++unresolved;
    } else {
      ++outcomes[static_cast<std::size_t>(rec.outcome)];
    }
  }

  void merge(const BlockAccumulator& o) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i].merge(o.v[i]);
      h[i].merge(o.h[i]);
      for (std::size_t g = 0; g < pi[i].size(); ++g) pi[i][g].merge(o.pi[i][g]);
    }
    for (std::size_t g = 0; g < outcomes.size(); ++g) outcomes[g] += o.outcomes[g];
    unresolved += o.unresolved;
    if (blowups == 0 && o.blowups > 0) {
      first_blowup_index = o.first_blowup_index;
      first_blowup_what = o.first_blowup_what;
    }
    blowups += o.blowups;
  }
};

}  // namespace detail

// Monte Carlo over trajectory indices 0..n_traj-1. Trajectories are grouped
// into fixed-size blocks that are accumulated sequentially and merged in
// block order, so the result is identical for any thread count.
inline EnsembleStats run_ensemble(const StateVector& z0, const HermitianOperator& h,
                                  const SdeConfig& cfg, long n_traj, int n_threads = 0) {
  if (n_traj < 1) throw std::invalid_argument("run_ensemble: n_traj must be >= 1");
  cfg.validate();

  const EigenDecomposition eig = eigendecompose(h);
  const std::size_t n_groups = eig.degeneracy_groups.size();

  // one probe trajectory fixes the recorded time grid
  const TrajectoryRecord probe = evolve(z0, h, eig, cfg, 0);
  const std::size_t n_times = probe.times.size();

  constexpr long kBlock = 64;
  const long n_blocks = (n_traj + kBlock - 1) / kBlock;
  std::vector<detail::BlockAccumulator> blocks(static_cast<std::size_t>(n_blocks));

  std::atomic<long> next_block{0};
  auto worker = [&]() {
    for (;;) {
      const long b = next_block.fetch_add(1);
      if (b >= n_blocks) return;
      auto& acc = blocks[static_cast<std::size_t>(b)];
      acc.init(n_times, n_groups);
      const long lo = b * kBlock;
      const long hi = std::min(n_traj, lo + kBlock);
      for (long idx = lo; idx < hi; ++idx) {
        try {
          acc.add(evolve(z0, h, eig, cfg, static_cast<std::uint64_t>(idx)));
        } catch (const BlowupError& e) {
          if (acc.blowups == 0) {
            acc.first_blowup_index = idx;
            acc.first_blowup_what = e.what();
          }
          ++acc.blowups;
        }
      }
    }
  };

  const int threads = n_threads > 0 ? n_threads : 1;
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  detail::BlockAccumulator total;
  total.init(n_times, n_groups);
  for (const auto& b : blocks) total.merge(b);

  if (total.blowups * 100 > n_traj) {
    throw std::runtime_error("run_ensemble: >1% of trajectories blew up; first at index " +
                             std::to_string(total.first_blowup_index) + ": " +
                             total.first_blowup_what);
  }

  EnsembleStats st;
  st.n_traj = n_traj;
  st.sigma = cfg.sigma;
  st.initial_energy = expectation(h, z0);
  st.born_probs = born_probabilities(z0, eig);
  st.outcome_counts = total.outcomes;
  st.unresolved_count = total.unresolved;
  st.blowup_count = total.blowups;
  st.times = probe.times;
  st.v_series = std::move(total.v);
  st.h_series = std::move(total.h);
  st.pi_series = std::move(total.pi);

  st.outcome_freqs.resize(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    st.outcome_freqs[g] = static_cast<double>(st.outcome_counts[g]) / static_cast<double>(n_traj);
  }

  // chi-squared over resolved outcomes only; unresolved trajectories are
  // reported separately, never folded into an outcome bin
  const long n_res = st.resolved_count();
  st.chi2 = 0.0;
  st.chi2_dof = -1;
  for (std::size_t g = 0; g < n_groups; ++g) {
    if (st.born_probs[g] <= 1e-12) {
      if (st.outcome_counts[g] > 0) st.chi2 = std::numeric_limits<double>::infinity();
      continue;
    }
    const double expect = static_cast<double>(n_res) * st.born_probs[g];
    const double d = static_cast<double>(st.outcome_counts[g]) - expect;
    if (n_res > 0) st.chi2 += d * d / expect;
    ++st.chi2_dof;
  }
  st.chi2_dof = std::max(st.chi2_dof, 0);
  st.chi2_pvalue = std::isfinite(st.chi2) ? chi_squared_pvalue(st.chi2, st.chi2_dof) : 0.0;
  return st;
}

struct MartingaleReport {
  std::vector<double> max_normalized_deviation;  // per eigengroup over all times
  double worst = 0.0;
};

// Deviation of E[(Pi_e)_t] from its initial value p_e in units of the Monte
// Carlo standard error; under the martingale null these stay O(1).
inline MartingaleReport martingale_report(const EnsembleStats& st) {
  MartingaleReport rep;
  rep.max_normalized_deviation.assign(st.born_probs.size(), 0.0);
  for (std::size_t g = 0; g < st.born_probs.size(); ++g) {
    for (std::size_t i = 0; i < st.times.size(); ++i) {
      const double diff = std::abs(st.pi_series[i][g].mean - st.born_probs[g]);
      const double se = st.pi_series[i][g].standard_error();
      double dev;
      if (se > 0.0) {
        dev = diff / se;
      } else {
        dev = diff <= 1e-9 ? 0.0 : std::numeric_limits<double>::infinity();
      }
      rep.max_normalized_deviation[g] = std::max(rep.max_normalized_deviation[g], dev);
    }
  }
  for (double d : rep.max_normalized_deviation) rep.worst = std::max(rep.worst, d);
  return rep;
}

struct VarianceDecayReport {
  bool monotone_ok = true;       // E[V_t] nonincreasing beyond 4 SE noise
  bool inequality_ok = true;     // E[V_t] <= E[V_0] - sigma^2 int (E[V_s])^2 ds + 4 SE
  double min_margin = std::numeric_limits<double>::infinity();
  std::vector<double> margins;   // per recorded time, >= 0 when the bound holds
};

inline VarianceDecayReport variance_decay_report(const EnsembleStats& st) {
  VarianceDecayReport rep;
  const double s2 = st.sigma * st.sigma;
  const double v0 = st.v_series.front().mean;
  const double se0 = st.v_series.front().standard_error();

  double integral = 0.0;     // trapezoid of (E[V_s])^2
  double integral_se = 0.0;  // first-order propagated SE of the integral
  rep.margins.resize(st.times.size());
  for (std::size_t i = 0; i < st.times.size(); ++i) {
    if (i > 0) {
      const double dt = st.times[i] - st.times[i - 1];
      const double a = st.v_series[i - 1].mean, b = st.v_series[i].mean;
      integral += 0.5 * dt * (a * a + b * b);
      integral_se += 0.5 * dt * (2.0 * std::abs(a) * st.v_series[i - 1].standard_error() +
                                 2.0 * std::abs(b) * st.v_series[i].standard_error());

      const double step_noise =
          4.0 * std::sqrt(st.v_series[i].variance() / st.v_series[i].n +
                          st.v_series[i - 1].variance() / st.v_series[i - 1].n);
      if (st.v_series[i].mean > st.v_series[i - 1].mean + step_noise) rep.monotone_ok = false;
    }
    const double sei = st.v_series[i].standard_error();
    const double combined = std::sqrt(se0 * se0 + sei * sei + integral_se * integral_se * s2 * s2);
    rep.margins[i] = (v0 - s2 * integral + 4.0 * combined) - st.v_series[i].mean;
    rep.min_margin = std::min(rep.min_margin, rep.margins[i]);
    if (rep.margins[i] < 0.0) rep.inequality_ok = false;
  }
  return rep;
}

struct EnergyConservationReport {
  double max_normalized_drift = 0.0;
};

// |E[(H)_t] - (H)_0| in standard-error units; the initial expectation is
// exact, so the comparison baseline carries no MC error.
inline EnergyConservationReport energy_conservation_report(const EnsembleStats& st) {
  EnergyConservationReport rep;
  for (std::size_t i = 0; i < st.times.size(); ++i) {
    const double diff = std::abs(st.h_series[i].mean - st.initial_energy);
    const double se = st.h_series[i].standard_error();
    double dev;
    if (se > 0.0) {
      dev = diff / se;
    } else {
      dev = diff <= 1e-9 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    rep.max_normalized_drift = std::max(rep.max_normalized_drift, dev);
  }
  return rep;
}

}  // namespace hughston
