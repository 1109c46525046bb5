#pragma once

#include "hughston/ensemble.hpp"
#include "hughston/operator_algebra.hpp"
#include "hughston/projective_geometry.hpp"
#include "hughston/rng.hpp"
#include "hughston/sde_engine.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hughston {

// A product system: H = sum_l (I (x) ... (x) H_l (x) ... (x) I) on the
// tensor product of the subsystem spaces, with a product initial state.
struct CompositeSystem {
  std::vector<Eigen::Index> dims;
  std::vector<HermitianOperator> subsystem_hams;
  std::vector<StateVector> initial_parts;
  HermitianOperator total_ham;

  CompositeSystem(std::vector<HermitianOperator> hams, std::vector<StateVector> parts)
      : subsystem_hams(std::move(hams)),
        initial_parts(std::move(parts)),
        total_ham(HermitianOperator::identity(1)) {
    if (subsystem_hams.empty()) throw std::invalid_argument("CompositeSystem: no subsystems");
    if (subsystem_hams.size() != initial_parts.size()) {
      throw std::invalid_argument("CompositeSystem: one initial state per subsystem required");
    }
    for (std::size_t l = 0; l < subsystem_hams.size(); ++l) {
      if (subsystem_hams[l].dim() != initial_parts[l].dim()) {
        throw std::invalid_argument("CompositeSystem: Hamiltonian/state dimension mismatch");
      }
      dims.push_back(subsystem_hams[l].dim());
    }
    Eigen::Index total = 1;
    for (Eigen::Index d : dims) total *= d;
    CMat sum = CMat::Zero(total, total);
    for (std::size_t l = 0; l < subsystem_hams.size(); ++l) {
      sum += embed_subsystem_operator(subsystem_hams[l], l, dims).mat();
    }
    total_ham = HermitianOperator(sum);
  }

  StateVector initial_joint_state() const { return tensor_state(initial_parts); }
};

// | (H)_joint - sum (H_l)_l |  and  | V_joint - sum V_l |  on the tensor
// product of `parts`.
inline std::pair<double, double> additivity_check(const CompositeSystem& sys,
                                                  const std::vector<StateVector>& parts) {
  if (parts.size() != sys.dims.size()) {
    throw std::invalid_argument("additivity_check: wrong number of parts");
  }
  const StateVector joint = tensor_state(parts);
  double sum_h = 0.0, sum_v = 0.0;
  for (std::size_t l = 0; l < parts.size(); ++l) {
    sum_h += expectation(sys.subsystem_hams[l], parts[l]);
    sum_v += variance(sys.subsystem_hams[l], parts[l]);
  }
  return {std::abs(expectation(sys.total_ham, joint) - sum_h),
          std::abs(variance(sys.total_ham, joint) - sum_v)};
}

// Line-element additivity: for subsystem perturbations deltas[l] applied with
// step h, compares ds^2 of the joint product state against the sum of the
// subsystem ds^2, each via the fidelity deficit 4(1 - |<z|z'>|^2 / norms).
// The comparison is on the line element, not on raw metric blocks: a single
// joint chart carries cross coordinates that no subsystem chart owns.
inline double metric_block_structure_check(const CompositeSystem& sys,
                                           const std::vector<StateVector>& parts,
                                           const std::vector<CVec>& deltas, double h = 1e-3) {
  if (deltas.size() != parts.size()) {
    throw std::invalid_argument("metric_block_structure_check: one delta per part required");
  }
  std::vector<StateVector> perturbed;
  double sum_ds2 = 0.0;
  for (std::size_t l = 0; l < parts.size(); ++l) {
    StateVector pert(parts[l].amps() + h * deltas[l]);
    sum_ds2 += 4.0 * (1.0 - fidelity(parts[l], pert));
    perturbed.push_back(std::move(pert));
  }
  const double ds2_joint =
      4.0 * (1.0 - fidelity(tensor_state(parts), tensor_state(perturbed)));
  return std::abs(ds2_joint - sum_ds2);
}

// Randomized sweep of the line-element additivity check.
inline double metric_block_structure_sweep(const CompositeSystem& sys, int draws,
                                           std::uint64_t seed, double h = 1e-3) {
  RngStream rng = make_stream(seed, 17);
  double worst = 0.0;
  for (int i = 0; i < draws; ++i) {
    std::vector<CVec> deltas;
    for (Eigen::Index d : sys.dims) {
      CVec delta(d);
      for (Eigen::Index k = 0; k < d; ++k) delta(k) = Complex(gaussian(rng), gaussian(rng));
      deltas.push_back(delta.normalized());
    }
    worst = std::max(worst, metric_block_structure_check(sys, sys.initial_parts, deltas, h));
  }
  return worst;
}

struct CoupledTrial {
  TrajectoryRecord joint;
  std::vector<TrajectoryRecord> parts;
  std::vector<double> divergence;  // 1 - ray fidelity(joint, tensor of parts)
  std::vector<double> times;
};

// Evolves the joint state and every subsystem under the same Wiener
// increments (shared_noise = true, the physical case) or under independent
// streams (the negative control). Collapse freezing is disabled so the
// comparison sees the genuine dynamics over the whole horizon.
inline CoupledTrial coupled_evolution(const CompositeSystem& sys, const SdeConfig& cfg,
                                      std::uint64_t trajectory_index = 0,
                                      bool shared_noise = true) {
  SdeConfig run_cfg = cfg;
  run_cfg.record_states = true;
  run_cfg.stop_on_collapse = false;

  const long n = run_cfg.n_steps();
  const double sqrt_dt = std::sqrt(run_cfg.dt);

  auto draw_increments = [&](std::uint64_t stream_index) {
    RngStream rng = make_stream(run_cfg.seed, stream_index);
    std::vector<double> dw(static_cast<std::size_t>(n));
    for (auto& v : dw) v = gaussian(rng, sqrt_dt);
    return dw;
  };

  const std::vector<double> joint_dw = draw_increments(trajectory_index);

  CoupledTrial trial;
  trial.joint = evolve_replay(sys.initial_joint_state(), sys.total_ham,
                              eigendecompose(sys.total_ham), run_cfg, joint_dw);
  for (std::size_t l = 0; l < sys.dims.size(); ++l) {
    const std::vector<double> dw =
        shared_noise ? joint_dw
                     : draw_increments(trajectory_index * 1000003ULL + l + 1);
    trial.parts.push_back(evolve_replay(sys.initial_parts[l], sys.subsystem_hams[l],
                                        eigendecompose(sys.subsystem_hams[l]), run_cfg, dw));
  }

  trial.times = trial.joint.times;
  trial.divergence.resize(trial.times.size());
  for (std::size_t i = 0; i < trial.times.size(); ++i) {
    std::vector<StateVector> at_i;
    for (const auto& part : trial.parts) at_i.push_back(part.states[i]);
    trial.divergence[i] = 1.0 - fidelity(trial.joint.states[i], tensor_state(at_i));
  }
  return trial;
}

struct RefinementStudy {
  std::vector<double> max_divergence_coarse;  // per paired-seed trial, at dt
  std::vector<double> max_divergence_fine;    // at dt/2
  double mean_coarse = 0.0;
  double mean_fine = 0.0;
  double ratio_of_means = 0.0;  // ~2 for first-order tracking, ~1 when broken
};

// dt-refinement of the joint-vs-product divergence over paired seeds.
// ratio_of_means ~ 2 when the divergence is dominated by O(dt) truncation
// error; a ratio pinned near 1 means a dt-independent gap survives.
inline RefinementStudy refinement_study(const CompositeSystem& sys, const SdeConfig& cfg,
                                        int n_trials, bool shared_noise = true) {
  RefinementStudy study;
  SdeConfig fine = cfg;
  fine.dt = cfg.dt / 2.0;
  fine.record_stride = cfg.record_stride * 2;

  for (int i = 0; i < n_trials; ++i) {
    const CoupledTrial coarse = coupled_evolution(sys, cfg, static_cast<std::uint64_t>(i),
                                                  shared_noise);
    const CoupledTrial refined = coupled_evolution(sys, fine, static_cast<std::uint64_t>(i),
                                                   shared_noise);
    double mc = 0.0, mf = 0.0;
    for (double d : coarse.divergence) mc = std::max(mc, d);
    for (double d : refined.divergence) mf = std::max(mf, d);
    study.max_divergence_coarse.push_back(mc);
    study.max_divergence_fine.push_back(mf);
    study.mean_coarse += mc;
    study.mean_fine += mf;
  }
  study.mean_coarse /= n_trials;
  study.mean_fine /= n_trials;
  study.ratio_of_means = study.mean_fine > 0.0 ? study.mean_coarse / study.mean_fine
                                               : std::numeric_limits<double>::infinity();
  return study;
}

struct SubsystemBornRecord {
  std::vector<double> born_probs;
  std::vector<long> outcome_counts;
  long unresolved = 0;
  double chi2 = 0.0;
  int chi2_dof = 0;
  double chi2_pvalue = 1.0;
};

// Runs coupled trials and checks each subsystem's collapse frequencies
// against its own Born marginals.
inline std::vector<SubsystemBornRecord> subsystem_born_check(const CompositeSystem& sys,
                                                             const SdeConfig& cfg, long n_traj) {
  std::vector<EigenDecomposition> eigs;
  std::vector<SubsystemBornRecord> recs(sys.dims.size());
  for (std::size_t l = 0; l < sys.dims.size(); ++l) {
    eigs.push_back(eigendecompose(sys.subsystem_hams[l]));
    recs[l].born_probs = born_probabilities(sys.initial_parts[l], eigs[l]);
    recs[l].outcome_counts.assign(recs[l].born_probs.size(), 0);
  }
  const EigenDecomposition joint_eig = eigendecompose(sys.total_ham);
  const long n = cfg.n_steps();
  const double sqrt_dt = std::sqrt(cfg.dt);

  for (long idx = 0; idx < n_traj; ++idx) {
    RngStream rng = make_stream(cfg.seed, static_cast<std::uint64_t>(idx));
    std::vector<double> dw(static_cast<std::size_t>(n));
    for (auto& v : dw) v = gaussian(rng, sqrt_dt);
    for (std::size_t l = 0; l < sys.dims.size(); ++l) {
      const TrajectoryRecord rec =
          evolve_replay(sys.initial_parts[l], sys.subsystem_hams[l], eigs[l], cfg, dw);
      if (rec.outcome == kUnresolved) {
        ++recs[l].unresolved;
      } else {
        ++recs[l].outcome_counts[static_cast<std::size_t>(rec.outcome)];
      }
    }
  }

  for (auto& r : recs) {
    long n_res = 0;
    for (long c : r.outcome_counts) n_res += c;
    r.chi2_dof = -1;
    for (std::size_t g = 0; g < r.born_probs.size(); ++g) {
      if (r.born_probs[g] <= 1e-12) {
        if (r.outcome_counts[g] > 0) r.chi2 = std::numeric_limits<double>::infinity();
        continue;
      }
      const double expect = static_cast<double>(n_res) * r.born_probs[g];
      const double d = static_cast<double>(r.outcome_counts[g]) - expect;
      if (n_res > 0) r.chi2 += d * d / expect;
      ++r.chi2_dof;
    }
    r.chi2_dof = std::max(r.chi2_dof, 0);
    r.chi2_pvalue = std::isfinite(r.chi2) ? chi_squared_pvalue(r.chi2, r.chi2_dof) : 0.0;
  }
  return recs;
}

}  // namespace hughston
