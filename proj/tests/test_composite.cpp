#include "hughston/composite.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace hughston;

namespace {

HermitianOperator two_level(double gap) {
  return HermitianOperator::diagonal((RVec(2) << 0.0, gap).finished());
}

StateVector symmetric_qubit() { return StateVector{Complex(1, 0), Complex(1, 0)}; }

CompositeSystem two_qubit_system() {
  return CompositeSystem({two_level(1.0), two_level(0.7)},
                         {symmetric_qubit(), symmetric_qubit()});
}

}  // namespace

TEST_CASE("CompositeSystem assembly") {
  const CompositeSystem sys = two_qubit_system();
  REQUIRE(sys.dims == std::vector<Eigen::Index>{2, 2});
  CHECK(sys.total_ham.dim() == 4);

  // diag(0,1) (x) I + I (x) diag(0,0.7) = diag(0, 0.7, 1, 1.7), leftmost slowest
  const CMat m = sys.total_ham.mat();
  CHECK(m(0, 0).real() == Catch::Approx(0.0).margin(1e-14));
  CHECK(m(1, 1).real() == Catch::Approx(0.7).margin(1e-14));
  CHECK(m(2, 2).real() == Catch::Approx(1.0).margin(1e-14));
  CHECK(m(3, 3).real() == Catch::Approx(1.7).margin(1e-14));
  CHECK(m.cwiseAbs().sum() == Catch::Approx(3.4).margin(1e-12));

  CHECK(sys.initial_joint_state().dim() == 4);
  CHECK_THROWS_AS(CompositeSystem({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(CompositeSystem({two_level(1.0)}, {}), std::invalid_argument);
}

TEST_CASE("additivity on random product states") {
  RngStream rng = make_stream(71, 0);

  for (auto dims : {std::vector<Eigen::Index>{2, 2}, std::vector<Eigen::Index>{2, 3}}) {
    std::vector<HermitianOperator> hams;
    std::vector<StateVector> seeds;
    for (Eigen::Index d : dims) {
      hams.push_back(random_hermitian(d, rng));
      seeds.push_back(random_state(d, rng));
    }
    const CompositeSystem sys(hams, seeds);

    for (int i = 0; i < 50; ++i) {
      std::vector<StateVector> parts;
      for (Eigen::Index d : dims) parts.push_back(random_state(d, rng));
      const auto [dh, dv] = additivity_check(sys, parts);
      CHECK(dh < 1e-10);
      CHECK(dv < 1e-10);
    }
  }
}

TEST_CASE("line element additivity on product rays") {
  const CompositeSystem sys = two_qubit_system();

  SECTION("hand-built perturbation") {
    const std::vector<CVec> deltas{(CVec(2) << Complex(0, 0), Complex(1, 0)).finished(),
                                   (CVec(2) << Complex(0, 0.5), Complex(-0.3, 0)).finished()};
    CHECK(metric_block_structure_check(sys, sys.initial_parts, deltas, 1e-4) < 1e-8);
  }

  SECTION("randomized sweep stays under tolerance") {
    CHECK(metric_block_structure_sweep(sys, 50, 908, 1e-4) < 1e-8);
  }
}

TEST_CASE("coupled_evolution degenerate cases") {
  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-3;
  cfg.t_final = 1.0;
  cfg.seed = 31;
  cfg.record_stride = 50;

  SECTION("a single subsystem never diverges from itself") {
    const CompositeSystem solo({two_level(1.0)}, {symmetric_qubit()});
    const CoupledTrial trial = coupled_evolution(solo, cfg);
    for (double d : trial.divergence) CHECK(std::abs(d) < 1e-12);
  }

  SECTION("an eigenvector factor keeps the product form") {
    const CompositeSystem sys({two_level(1.0), two_level(0.7)},
                              {StateVector{Complex(1, 0), Complex(0, 0)}, symmetric_qubit()});
    const CoupledTrial trial = coupled_evolution(sys, cfg);
    for (double d : trial.divergence) CHECK(std::abs(d) < 1e-4);
  }
}

TEST_CASE("early joint-vs-product gap matches the quadratic cross-term rate") {
  // For H = H1 (x) I + I (x) H2 driven by one Wiener process, the product
  // ansatz misses an O(sigma^2) cross term whose amplitude is
  // (sigma^2 / 2) |A a| |B b| t at short times, A = H1 - (H1), B = H2 - (H2).
  // Here |A a| = 0.5 and |B b| = 0.35, so the ray divergence (1 - fidelity)
  // should track (sigma^2 / 2 * 0.175 * t)^2 before collapse reshapes the
  // factors.
  const CompositeSystem sys = two_qubit_system();
  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-4;
  cfg.t_final = 0.15;
  cfg.seed = 77;
  cfg.record_stride = 150;

  RunningMoments end_div;
  for (int i = 0; i < 40; ++i) {
    const CoupledTrial trial = coupled_evolution(sys, cfg, static_cast<std::uint64_t>(i));
    end_div.add(trial.divergence.back());
  }
  const double predicted = std::pow(0.5 * 0.175 * cfg.t_final, 2);
  INFO("mean end divergence " << end_div.mean << " predicted " << predicted);
  CHECK(end_div.mean > predicted / 3.0);
  CHECK(end_div.mean < predicted * 3.0);
}

TEST_CASE("shared noise tracks far better than independent noise") {
  const CompositeSystem sys = two_qubit_system();
  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-3;
  cfg.t_final = 1.0;
  cfg.seed = 55;
  cfg.record_stride = 100;

  double shared_max = 0.0, indep_max = 0.0;
  for (int i = 0; i < 10; ++i) {
    const CoupledTrial s = coupled_evolution(sys, cfg, static_cast<std::uint64_t>(i), true);
    const CoupledTrial u = coupled_evolution(sys, cfg, static_cast<std::uint64_t>(i), false);
    for (double d : s.divergence) shared_max = std::max(shared_max, d);
    for (double d : u.divergence) indep_max = std::max(indep_max, d);
  }
  CHECK(shared_max < 0.1);
  CHECK(indep_max > 10.0 * shared_max);
}

TEST_CASE("refinement_study bookkeeping") {
  const CompositeSystem sys = two_qubit_system();
  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-3;
  cfg.t_final = 0.5;
  cfg.seed = 99;
  cfg.record_stride = 50;

  const RefinementStudy study = refinement_study(sys, cfg, 5);
  REQUIRE(study.max_divergence_coarse.size() == 5);
  REQUIRE(study.max_divergence_fine.size() == 5);
  for (double d : study.max_divergence_coarse) CHECK(d > 0.0);
  for (double d : study.max_divergence_fine) CHECK(d > 0.0);
  CHECK(study.ratio_of_means ==
        Catch::Approx(study.mean_coarse / study.mean_fine).epsilon(1e-12));
}

TEST_CASE("subsystem_born_check marginals") {
  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-3;
  cfg.t_final = 150.0;
  cfg.seed = 404;
  cfg.record_stride = 1000;

  SECTION("an eigenvector factor resolves to its own level every time") {
    const CompositeSystem sys({two_level(1.0), two_level(0.7)},
                              {StateVector{Complex(0, 0), Complex(1, 0)}, symmetric_qubit()});
    const auto recs = subsystem_born_check(sys, cfg, 60);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].outcome_counts[1] == 60);
    CHECK(recs[0].unresolved == 0);
    const long resolved1 = recs[1].outcome_counts[0] + recs[1].outcome_counts[1];
    CHECK(resolved1 + recs[1].unresolved == 60);
    CHECK(recs[1].chi2_pvalue > 0.001);
  }

  SECTION("sigma = 0 leaves superpositions unresolved") {
    SdeConfig quiet = cfg;
    quiet.sigma = 0.0;
    quiet.t_final = 1.0;
    const CompositeSystem sys = two_qubit_system();
    const auto recs = subsystem_born_check(sys, quiet, 10);
    CHECK(recs[0].unresolved == 10);
    CHECK(recs[1].unresolved == 10);
  }
}
