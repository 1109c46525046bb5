#pragma once

#include "hughston/serialization.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hughston {

inline constexpr const char* kVersion = "0.1.0";

// Exit-status contract shared by the CLI and the runner.
enum ExitStatus : int {
  kExitPass = 0,
  kExitStatisticalFailure = 1,
  kExitNumericalError = 2,
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

// "name(arg1,arg2,...)" or bare "name".
struct Preset {
  std::string name;
  std::vector<std::string> args;
};

inline Preset parse_preset(const std::string& text) {
  Preset p;
  const auto open = text.find('(');
  if (open == std::string::npos) {
    p.name = text;
    return p;
  }
  if (text.back() != ')') throw ConfigError("malformed preset '" + text + "': missing ')'");
  p.name = text.substr(0, open);
  std::string body = text.substr(open + 1, text.size() - open - 2);
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto a = tok.find_first_not_of(" \t");
    const auto b = tok.find_last_not_of(" \t");
    if (a == std::string::npos) throw ConfigError("malformed preset '" + text + "': empty argument");
    p.args.push_back(tok.substr(a, b - a + 1));
  }
  return p;
}

inline double arg_to_double(const Preset& p, std::size_t i) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(p.args.at(i), &pos);
    if (pos != p.args[i].size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("preset '" + p.name + "': argument " + std::to_string(i + 1) +
                      " is not a number");
  }
}

inline long arg_to_long(const Preset& p, std::size_t i) {
  const double v = arg_to_double(p, i);
  const long l = std::lround(v);
  if (static_cast<double>(l) != v) {
    throw ConfigError("preset '" + p.name + "': argument " + std::to_string(i + 1) +
                      " is not an integer");
  }
  return l;
}

inline void require_args(const Preset& p, std::size_t lo, std::size_t hi) {
  if (p.args.size() < lo || p.args.size() > hi) {
    throw ConfigError("preset '" + p.name + "': expected " + std::to_string(lo) +
                      (hi > lo ? ".." + std::to_string(hi) : "") + " argument(s), got " +
                      std::to_string(p.args.size()));
  }
}

inline void check_keys(const Json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) return;
  std::string unknown;
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) unknown += (unknown.empty() ? "" : ", ") + item.key();
  }
  if (!unknown.empty()) throw ConfigError("unknown key(s) in " + where + ": " + unknown);
}

inline CMat matrix_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field + ".matrix: expected a 2-D array");
  const Eigen::Index n = static_cast<Eigen::Index>(j.size());
  CMat m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
      throw ConfigError(field + ".matrix: row " + std::to_string(r) + " is not length " +
                        std::to_string(n));
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      const Json& e = row[static_cast<std::size_t>(c)];
      if (e.is_number()) {
        m(r, c) = Complex(e.get<double>(), 0.0);
      } else if (e.is_array() && e.size() == 2) {
        m(r, c) = Complex(e[0].get<double>(), e[1].get<double>());
      } else {
        throw ConfigError(field + ".matrix: entries must be numbers or [re, im] pairs");
      }
    }
  }
  return m;
}

inline CVec amplitudes_from_json(const Json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field + ".amplitudes: expected an array");
  CVec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const Json& e = j[static_cast<std::size_t>(i)];
    if (e.is_number()) {
      v(i) = Complex(e.get<double>(), 0.0);
    } else if (e.is_array() && e.size() == 2) {
      v(i) = Complex(e[0].get<double>(), e[1].get<double>());
    } else {
      throw ConfigError(field + ".amplitudes: entries must be numbers or [re, im] pairs");
    }
  }
  return v;
}

}  // namespace detail

// Hamiltonian spec: preset string or explicit matrix.
inline HermitianOperator parse_system(const Json& j, const std::string& field) {
  if (j.is_string()) {
    const detail::Preset p = detail::parse_preset(j.get<std::string>());
    if (p.name == "two_level") {
      detail::require_args(p, 1, 1);
      CMat m = CMat::Zero(2, 2);
      m(1, 1) = detail::arg_to_double(p, 0);
      return HermitianOperator(m);
    }
    if (p.name == "diag") {
      detail::require_args(p, 1, 64);
      RVec d(static_cast<Eigen::Index>(p.args.size()));
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        d(i) = detail::arg_to_double(p, static_cast<std::size_t>(i));
      }
      return HermitianOperator::diagonal(d);
    }
    if (p.name == "random") {
      detail::require_args(p, 2, 2);
      const long dim = detail::arg_to_long(p, 0);
      if (dim < 1 || dim > 64) throw ConfigError("preset 'random': dim out of range [1, 64]");
      RngStream rng = make_stream(static_cast<std::uint64_t>(detail::arg_to_long(p, 1)), 0);
      return random_hermitian(dim, rng);
    }
    throw ConfigError(field + ": unknown system preset '" + p.name +
                      "'; valid presets: two_level(gap), diag(list), random(dim, seed)");
  }
  if (j.is_object()) {
    detail::check_keys(j, field, {"matrix"});
    if (!j.contains("matrix")) throw ConfigError(field + ": object form requires 'matrix'");
    return HermitianOperator(detail::matrix_from_json(j["matrix"], field));
  }
  throw ConfigError(field + ": expected a preset string or {\"matrix\": ...}");
}

// Initial-state spec: preset string or explicit amplitudes. dim comes from
// the system and pins "uniform"/"basis".
inline StateVector parse_initial_state(const Json& j, Eigen::Index dim, const std::string& field) {
  if (j.is_string()) {
    const detail::Preset p = detail::parse_preset(j.get<std::string>());
    if (p.name == "uniform") {
      detail::require_args(p, 0, 0);
      return StateVector(CVec::Ones(dim) / std::sqrt(static_cast<double>(dim)));
    }
    if (p.name == "basis") {
      detail::require_args(p, 1, 1);
      const long k = detail::arg_to_long(p, 0);
      if (k < 0 || k >= dim) {
        throw ConfigError(field + ": basis(" + std::to_string(k) + ") out of range for dim " +
                          std::to_string(dim));
      }
      CVec v = CVec::Zero(dim);
      v(k) = 1.0;
      return StateVector(v);
    }
    if (p.name == "amplitudes") {
      detail::require_args(p, 1, 128);
      CVec v(static_cast<Eigen::Index>(p.args.size()));
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = Complex(detail::arg_to_double(p, static_cast<std::size_t>(i)), 0.0);
      }
      return StateVector(v);
    }
    throw ConfigError(field + ": unknown state preset '" + p.name +
                      "'; valid presets: uniform, basis(k), amplitudes(list)");
  }
  if (j.is_object()) {
    detail::check_keys(j, field, {"amplitudes"});
    if (!j.contains("amplitudes")) throw ConfigError(field + ": object form requires 'amplitudes'");
    return StateVector(detail::amplitudes_from_json(j["amplitudes"], field));
  }
  throw ConfigError(field + ": expected a preset string or {\"amplitudes\": ...}");
}

struct SubsystemSpec {
  HermitianOperator ham;
  StateVector initial;
};

struct ExperimentConfig {
  std::string kind;
  std::optional<HermitianOperator> system;
  std::optional<StateVector> initial_state;
  std::vector<SubsystemSpec> subsystems;
  SdeConfig sde;
  long n_traj = 1000;
  int refinement_trials = 20;
  std::vector<Eigen::Index> identity_dims = {2, 3, 4};
  int identity_draws = 200;
  std::string output_dir = ".";
  bool emit_json = true;
  bool emit_csv = true;
  Json resolved;  // fully defaulted config document, round-trips through parse_config
};

inline SdeConfig parse_sde(const Json& j) {
  detail::check_keys(j, "sde",
                     {"sigma", "dt", "t_final", "chart_switch_threshold", "collapse_v_tol",
                      "projector_dominance", "seed", "record_stride", "record_states",
                      "record_increments", "stop_on_collapse"});
  SdeConfig cfg;
  if (j.contains("sigma")) cfg.sigma = j["sigma"].get<double>();
  if (j.contains("dt")) cfg.dt = j["dt"].get<double>();
  if (j.contains("t_final")) cfg.t_final = j["t_final"].get<double>();
  if (j.contains("chart_switch_threshold")) {
    cfg.chart_switch_threshold = j["chart_switch_threshold"].get<double>();
  }
  if (j.contains("collapse_v_tol")) cfg.collapse_v_tol = j["collapse_v_tol"].get<double>();
  if (j.contains("projector_dominance")) {
    cfg.projector_dominance = j["projector_dominance"].get<double>();
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("record_stride")) cfg.record_stride = j["record_stride"].get<int>();
  if (j.contains("record_states")) cfg.record_states = j["record_states"].get<bool>();
  if (j.contains("record_increments")) cfg.record_increments = j["record_increments"].get<bool>();
  if (j.contains("stop_on_collapse")) cfg.stop_on_collapse = j["stop_on_collapse"].get<bool>();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const Json& doc) {
  detail::check_keys(doc, "config",
                     {"kind", "system", "initial_state", "subsystems", "sde", "n_traj",
                      "refinement_trials", "identity_dims", "identity_draws", "output_dir",
                      "emit"});
  ExperimentConfig cfg;
  if (!doc.contains("kind")) throw ConfigError("config: 'kind' is required");
  cfg.kind = doc["kind"].get<std::string>();
  const bool composite_kind = cfg.kind == "composite" || cfg.kind == "negative_control";
  if (cfg.kind != "identities" && cfg.kind != "single_trajectory" && cfg.kind != "ensemble" &&
      !composite_kind) {
    throw ConfigError("config: unknown kind '" + cfg.kind +
                      "'; valid kinds: identities, single_trajectory, ensemble, composite, "
                      "negative_control");
  }

  if (doc.contains("sde")) cfg.sde = parse_sde(doc["sde"]);
  if (doc.contains("n_traj")) cfg.n_traj = doc["n_traj"].get<long>();
  if (cfg.n_traj < 1) throw ConfigError("config: n_traj must be >= 1");
  if (doc.contains("refinement_trials")) cfg.refinement_trials = doc["refinement_trials"].get<int>();
  if (cfg.refinement_trials < 1) throw ConfigError("config: refinement_trials must be >= 1");
  if (doc.contains("identity_dims")) {
    cfg.identity_dims.clear();
    for (const auto& d : doc["identity_dims"]) cfg.identity_dims.push_back(d.get<Eigen::Index>());
    if (cfg.identity_dims.empty()) throw ConfigError("config: identity_dims must be nonempty");
  }
  if (doc.contains("identity_draws")) cfg.identity_draws = doc["identity_draws"].get<int>();
  if (doc.contains("output_dir")) cfg.output_dir = doc["output_dir"].get<std::string>();
  if (doc.contains("emit")) {
    cfg.emit_json = false;
    cfg.emit_csv = false;
    for (const auto& e : doc["emit"]) {
      const std::string s = e.get<std::string>();
      if (s == "json") {
        cfg.emit_json = true;
      } else if (s == "csv") {
        cfg.emit_csv = true;
      } else {
        throw ConfigError("config: emit entries must be 'json' or 'csv', got '" + s + "'");
      }
    }
  }

  if (cfg.kind == "single_trajectory" || cfg.kind == "ensemble") {
    if (!doc.contains("system")) throw ConfigError("config: 'system' is required for " + cfg.kind);
    cfg.system = parse_system(doc["system"], "system");
    if (!doc.contains("initial_state")) {
      throw ConfigError("config: 'initial_state' is required for " + cfg.kind);
    }
    cfg.initial_state = parse_initial_state(doc["initial_state"], cfg.system->dim(),
                                            "initial_state");
    if (cfg.initial_state->dim() != cfg.system->dim()) {
      throw ConfigError("config: 'initial_state' dimension " +
                        std::to_string(cfg.initial_state->dim()) +
                        " does not match 'system' dimension " + std::to_string(cfg.system->dim()));
    }
  }
  if (composite_kind) {
    if (!doc.contains("subsystems") || !doc["subsystems"].is_array() ||
        doc["subsystems"].size() < 2) {
      throw ConfigError("config: 'subsystems' (array of >= 2 entries) is required for " +
                        cfg.kind);
    }
    std::size_t idx = 0;
    for (const auto& sub : doc["subsystems"]) {
      const std::string where = "subsystems[" + std::to_string(idx) + "]";
      detail::check_keys(sub, where, {"system", "initial_state"});
      if (!sub.contains("system") || !sub.contains("initial_state")) {
        throw ConfigError(where + ": 'system' and 'initial_state' are both required");
      }
      HermitianOperator h = parse_system(sub["system"], where + ".system");
      StateVector z = parse_initial_state(sub["initial_state"], h.dim(),
                                          where + ".initial_state");
      if (z.dim() != h.dim()) {
        throw ConfigError(where + ": 'initial_state' dimension " + std::to_string(z.dim()) +
                          " does not match 'system' dimension " + std::to_string(h.dim()));
      }
      cfg.subsystems.push_back({std::move(h), std::move(z)});
      ++idx;
    }
  }

  // resolved document: original system/state specs kept verbatim, every
  // default made explicit
  Json r;
  r["kind"] = cfg.kind;
  if (doc.contains("system")) r["system"] = doc["system"];
  if (doc.contains("initial_state")) r["initial_state"] = doc["initial_state"];
  if (doc.contains("subsystems")) r["subsystems"] = doc["subsystems"];
  r["sde"] = to_json(cfg.sde);
  r["n_traj"] = cfg.n_traj;
  r["refinement_trials"] = cfg.refinement_trials;
  r["identity_dims"] = cfg.identity_dims;
  r["identity_draws"] = cfg.identity_draws;
  r["output_dir"] = cfg.output_dir;
  Json emit = Json::array();
  if (cfg.emit_json) emit.push_back("json");
  if (cfg.emit_csv) emit.push_back("csv");
  r["emit"] = std::move(emit);
  cfg.resolved = std::move(r);
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  int n_threads = 0;
};

struct RunResult {
  int exit_code = kExitPass;
  Json manifest;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
}

inline double born_gate_worst_se(const EnsembleStats& st) {
  double worst = 0.0;
  const double n = static_cast<double>(st.resolved_count());
  if (n < 1) return std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < st.born_probs.size(); ++g) {
    const double p = st.born_probs[g];
    const double se = std::sqrt(std::max(p * (1.0 - p), 1e-300) / n);
    const double freq = static_cast<double>(st.outcome_counts[g]) / n;
    worst = std::max(worst, std::abs(freq - p) / se);
  }
  return worst;
}

}  // namespace detail

// Dispatches an experiment, writes its artifacts plus a manifest into the
// output directory, and returns the exit status. Every run leaves a manifest,
// also on failure.
inline RunResult run(const ExperimentConfig& cfg, const RunOverrides& ov = {}) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentConfig eff = cfg;
  if (ov.seed) {
    eff.sde.seed = *ov.seed;
    eff.resolved["sde"]["seed"] = *ov.seed;
  }
  if (ov.output_dir) {
    eff.output_dir = *ov.output_dir;
    eff.resolved["output_dir"] = *ov.output_dir;
  }

  RunResult result;
  Json& manifest = result.manifest;
  manifest["version"] = kVersion;
  manifest["resolved_config"] = eff.resolved;
  manifest["seed"] = eff.sde.seed;
  manifest["outputs"] = Json::array();

  const fs::path out(eff.output_dir);
  // writability is checked before any computation starts
  std::error_code ec;
  fs::create_directories(out, ec);
  {
    const fs::path probe = out / ".write_probe";
    std::ofstream os(probe);
    if (!os) throw std::runtime_error("output directory not writable: " + out.string());
    os.close();
    fs::remove(probe, ec);
  }

  auto emit_file = [&](const std::string& name, const std::string& text) {
    detail::write_text(out / name, text);
    manifest["outputs"].push_back(name);
  };

  Json report;
  std::string status = "pass";
  try {
    if (eff.kind == "identities") {
      const IdentitySweepStats sweep =
          identity_sweep(eff.identity_dims, eff.identity_draws, eff.sde.seed);
      report = to_json(sweep);
      if (eff.emit_json) emit_file("identities.json", report.dump(2) + "\n");
      if (!sweep.all_pass) status = "statistical_failure";
    } else if (eff.kind == "single_trajectory") {
      SdeConfig run_cfg = eff.sde;
      const TrajectoryRecord rec = evolve(*eff.initial_state, *eff.system, run_cfg);
      report = Json{{"outcome", rec.outcome},
                    {"final_time", rec.times.back()},
                    {"final_variance", rec.variance.back()},
                    {"final_energy", rec.energy_expect.back()},
                    {"steps_recorded", rec.times.size()}};
      if (eff.emit_csv) {
        std::ostringstream os;
        write_trajectory_csv(os, rec);
        emit_file("trajectory.csv", os.str());
      }
      if (eff.emit_json) emit_file("trajectory.json", report.dump(2) + "\n");
    } else if (eff.kind == "ensemble") {
      const EnsembleStats st =
          run_ensemble(*eff.initial_state, *eff.system, eff.sde, eff.n_traj, ov.n_threads);
      const MartingaleReport mart = martingale_report(st);
      const EnergyConservationReport energy = energy_conservation_report(st);
      const double born_worst = detail::born_gate_worst_se(st);
      const double unresolved_frac =
          static_cast<double>(st.unresolved_count) / static_cast<double>(st.n_traj);
      const bool pass = born_worst <= 3.0 && unresolved_frac < 0.01 &&
                        st.chi2_pvalue > 0.001 && energy.max_normalized_drift <= 4.0;
      report = to_json(st);
      report["gates"] = Json{{"born_worst_se", born_worst},
                             {"unresolved_fraction", unresolved_frac},
                             {"martingale_worst_se", mart.worst},
                             {"energy_worst_se", energy.max_normalized_drift},
                             {"pass", pass}};
      if (eff.emit_json) emit_file("ensemble.json", report.dump(2) + "\n");
      if (eff.emit_csv) {
        std::ostringstream os;
        write_ensemble_csv(os, st);
        emit_file("ensemble.csv", os.str());
      }
      if (!pass) status = "statistical_failure";
    } else {  // composite | negative_control
      std::vector<HermitianOperator> hams;
      std::vector<StateVector> parts;
      for (const auto& s : eff.subsystems) {
        hams.push_back(s.ham);
        parts.push_back(s.initial);
      }
      const CompositeSystem sys(std::move(hams), std::move(parts));
      const bool shared = eff.kind == "composite";
      const RefinementStudy study =
          refinement_study(sys, eff.sde, eff.refinement_trials, shared);
      const bool first_order = study.ratio_of_means >= 1.5 && study.ratio_of_means <= 3.0;
      const bool pass = shared ? first_order : !first_order;
      report = to_json(study);
      report["shared_noise"] = shared;
      report["first_order_band"] = Json{1.5, 3.0};
      report["pass"] = pass;
      if (eff.emit_json) {
        emit_file(shared ? "composite.json" : "control.json", report.dump(2) + "\n");
      }
      if (eff.emit_csv) {
        const CoupledTrial trial = coupled_evolution(sys, eff.sde, 0, shared);
        std::ostringstream os;
        write_divergence_csv(os, trial);
        emit_file("divergence.csv", os.str());
      }
      if (!pass) status = "statistical_failure";
    }
  } catch (const BlowupError& e) {
    status = "numerical_error";
    manifest["error"] = Json{{"type", "blowup"}, {"step", e.step}, {"message", e.what()}};
  } catch (const ChartError& e) {
    status = "numerical_error";
    manifest["error"] = Json{{"type", "chart"}, {"message", e.what()}};
  }

  const auto t1 = std::chrono::steady_clock::now();
  manifest["walltime_seconds"] = std::chrono::duration<double>(t1 - t0).count();
  manifest["status"] = status;
  if (!report.is_null()) manifest["report"] = report;
  detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");

  if (status == "pass") {
    result.exit_code = kExitPass;
  } else if (status == "statistical_failure") {
    result.exit_code = kExitStatisticalFailure;
  } else {
    result.exit_code = kExitNumericalError;
  }
  return result;
}

}  // namespace hughston
