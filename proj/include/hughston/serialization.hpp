#pragma once

#include "hughston/composite.hpp"
#include "hughston/ensemble.hpp"
#include "hughston/identity_oracle.hpp"

#include <json.hpp>

#include <cstdio>
#include <ostream>
#include <string>

namespace hughston {

using Json = nlohmann::ordered_json;

// Shortest round-trip decimal form, locale-independent. Keeps JSON and CSV
// outputs byte-stable for identical inputs.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lg", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lg", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

inline Json to_json(const SdeConfig& cfg) {
  return Json{{"sigma", cfg.sigma},
              {"dt", cfg.dt},
              {"t_final", cfg.t_final},
              {"chart_switch_threshold", cfg.chart_switch_threshold},
              {"collapse_v_tol", cfg.collapse_v_tol},
              {"projector_dominance", cfg.projector_dominance},
              {"seed", cfg.seed},
              {"record_stride", cfg.record_stride},
              {"record_states", cfg.record_states},
              {"record_increments", cfg.record_increments},
              {"stop_on_collapse", cfg.stop_on_collapse}};
}

inline Json to_json(const IdentitySweepStats& s) {
  return Json{{"draws", s.draws},
              {"threshold", s.threshold},
              {"all_pass", s.all_pass},
              {"max",
               {{"commutator", s.max.commutator},
                {"anticommutator", s.max.anticommutator},
                {"variance_relation", s.max.variance_relation},
                {"hessian_variance", s.max.hessian_variance}}},
              {"mean",
               {{"commutator", s.mean.commutator},
                {"anticommutator", s.mean.anticommutator},
                {"variance_relation", s.mean.variance_relation},
                {"hessian_variance", s.mean.hessian_variance}}}};
}

// Time-series moments flattened to mean/standard-error pairs. SE convention:
// sample standard deviation over sqrt(n), n = trajectories contributing.
inline Json series_json(const std::vector<RunningMoments>& series) {
  Json mean = Json::array();
  Json se = Json::array();
  for (const auto& m : series) {
    mean.push_back(m.mean);
    se.push_back(m.standard_error());
  }
  return Json{{"mean", std::move(mean)}, {"standard_error", std::move(se)}};
}

inline Json to_json(const EnsembleStats& st) {
  Json j{{"n_traj", st.n_traj},
         {"sigma", st.sigma},
         {"initial_energy", st.initial_energy},
         {"born_probabilities", st.born_probs},
         {"outcome_counts", st.outcome_counts},
         {"outcome_frequencies", st.outcome_freqs},
         {"unresolved_count", st.unresolved_count},
         {"blowup_count", st.blowup_count},
         {"chi2", st.chi2},
         {"chi2_dof", st.chi2_dof},
         {"chi2_pvalue", st.chi2_pvalue},
         {"times", st.times},
         {"variance", series_json(st.v_series)},
         {"energy", series_json(st.h_series)}};
  Json pi = Json::array();
  if (!st.pi_series.empty()) {
    const std::size_t groups = st.pi_series.front().size();
    for (std::size_t g = 0; g < groups; ++g) {
      std::vector<RunningMoments> col;
      col.reserve(st.pi_series.size());
      for (const auto& row : st.pi_series) col.push_back(row[g]);
      pi.push_back(series_json(col));
    }
  }
  j["projectors"] = std::move(pi);
  return j;
}

inline Json to_json(const MartingaleReport& r) {
  return Json{{"max_normalized_deviation", r.max_normalized_deviation}, {"worst", r.worst}};
}

inline Json to_json(const VarianceDecayReport& r) {
  return Json{{"monotone_ok", r.monotone_ok},
              {"inequality_ok", r.inequality_ok},
              {"min_margin", r.min_margin}};
}

inline Json to_json(const EnergyConservationReport& r) {
  return Json{{"max_normalized_drift", r.max_normalized_drift}};
}

inline Json to_json(const RefinementStudy& s) {
  return Json{{"max_divergence_coarse", s.max_divergence_coarse},
              {"max_divergence_fine", s.max_divergence_fine},
              {"mean_coarse", s.mean_coarse},
              {"mean_fine", s.mean_fine},
              {"ratio_of_means", s.ratio_of_means}};
}

inline Json to_json(const SubsystemBornRecord& r) {
  return Json{{"born_probabilities", r.born_probs},
              {"outcome_counts", r.outcome_counts},
              {"unresolved", r.unresolved},
              {"chi2", r.chi2},
              {"chi2_dof", r.chi2_dof},
              {"chi2_pvalue", r.chi2_pvalue}};
}

// Column order is frozen: t, V, H, one column per eigengroup projector,
// chart pivot.
inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec) {
  os << "t,V,H";
  for (Eigen::Index g = 0; g < rec.projector_expect.cols(); ++g) os << ",Pi_" << g;
  os << ",pivot\n";
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    os << format_double(rec.times[k]) << ',' << format_double(rec.variance[k]) << ','
       << format_double(rec.energy_expect[k]);
    for (Eigen::Index g = 0; g < rec.projector_expect.cols(); ++g) {
      os << ',' << format_double(rec.projector_expect(static_cast<Eigen::Index>(k), g));
    }
    os << ',' << rec.pivots[k] << '\n';
  }
}

// Column order is frozen: t, divergence, one variance column per subsystem.
inline void write_divergence_csv(std::ostream& os, const CoupledTrial& trial) {
  os << "t,divergence";
  for (std::size_t l = 0; l < trial.parts.size(); ++l) os << ",V_" << l;
  os << '\n';
  for (std::size_t k = 0; k < trial.times.size(); ++k) {
    os << format_double(trial.times[k]) << ',' << format_double(trial.divergence[k]);
    for (const auto& part : trial.parts) os << ',' << format_double(part.variance[k]);
    os << '\n';
  }
}

// Ensemble time series as a CSV matrix for external plotting.
inline void write_ensemble_csv(std::ostream& os, const EnsembleStats& st) {
  const std::size_t groups = st.born_probs.size();
  os << "t,V_mean,V_se,H_mean,H_se";
  for (std::size_t g = 0; g < groups; ++g) os << ",Pi_" << g << "_mean,Pi_" << g << "_se";
  os << '\n';
  for (std::size_t k = 0; k < st.times.size(); ++k) {
    os << format_double(st.times[k]) << ',' << format_double(st.v_series[k].mean) << ','
       << format_double(st.v_series[k].standard_error()) << ','
       << format_double(st.h_series[k].mean) << ','
       << format_double(st.h_series[k].standard_error());
    for (std::size_t g = 0; g < groups; ++g) {
      os << ',' << format_double(st.pi_series[k][g].mean) << ','
         << format_double(st.pi_series[k][g].standard_error());
    }
    os << '\n';
  }
}

}  // namespace hughston
