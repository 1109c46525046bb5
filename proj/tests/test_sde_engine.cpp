#include "hughston/sde_engine.hpp"
#include "hughston/stats.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <unsupported/Eigen/MatrixFunctions>

using namespace hughston;

namespace {

ProjectivePoint random_point(Eigen::Index amb, RngStream& rng) {
  const StateVector z = random_state(amb, rng);
  return chart_encode(z, best_pivot(z));
}

// Empirical two-sample Kolmogorov-Smirnov distance.
double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                             static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("drift_vector") {
  RngStream rng = make_stream(41, 0);

  SECTION("vanishes at eigenvector charts") {
    const HermitianOperator h = random_hermitian(3, rng);
    const auto eig = eigendecompose(h);
    for (int k = 0; k < 3; ++k) {
      const StateVector v = eig.eigenvector(k);
      const ProjectivePoint p = chart_encode(v, best_pivot(v));
      CHECK(drift_vector(h, p, 1.0).norm() < 1e-10);
    }
  }

  SECTION("sigma = 0 flow conserves the energy expectation") {
    const HermitianOperator h = HermitianOperator::diagonal((RVec(2) << 0, 1).finished());
    ProjectivePoint p = chart_encode(StateVector{Complex(1, 0), Complex(1, 0)}, 0);
    const double h0 = expectation(h, chart_decode(p));
    const double dt = 1e-4;
    for (int k = 0; k < 1000; ++k) {
      p.x += dt * drift_vector(h, p, 0.0);
    }
    CHECK(std::abs(expectation(h, chart_decode(p)) - h0) < 1e-4);
  }

  SECTION("variance term matches a finite-difference gradient") {
    const double sigma = 0.7;
    for (int i = 0; i < 5; ++i) {
      const HermitianOperator h = random_hermitian_unit_norm(3, rng);
      const ProjectivePoint p = random_point(3, rng);
      const RVec term2 = drift_vector(h, p, sigma) - drift_vector(h, p, 0.0);
      RVec fd(p.chart_dim());
      const double step = 1e-5;
      for (Eigen::Index a = 0; a < p.chart_dim(); ++a) {
        ProjectivePoint plus = p, minus = p;
        plus.x(a) += step;
        minus.x(a) -= step;
        fd(a) = (variance(h, chart_decode(plus)) - variance(h, chart_decode(minus))) /
                (2 * step);
      }
      const RVec expected = -0.25 * sigma * sigma * metric_inverse_apply(p, fd);
      CHECK((term2 - expected).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("diffusion_vector") {
  RngStream rng = make_stream(42, 0);
  const HermitianOperator h = random_hermitian(3, rng);
  const auto eig = eigendecompose(h);
  const StateVector v = eig.eigenvector(0);
  CHECK(diffusion_vector(h, chart_encode(v, best_pivot(v)), 1.0).norm() < 1e-10);

  const ProjectivePoint p = random_point(3, rng);
  CHECK(diffusion_vector(h, p, 0.0).norm() == 0.0);

  SECTION("metric contraction with itself equals sigma^2 V") {
    for (int i = 0; i < 20; ++i) {
      const HermitianOperator f = random_hermitian(4, rng);
      const ProjectivePoint q = random_point(4, rng);
      const double sigma = 1.3;
      const RVec s = diffusion_vector(f, q, sigma);
      const MetricBundle m = fubini_study_metric(q);
      CHECK(s.dot(m.g * s) ==
            Catch::Approx(sigma * sigma * variance(f, chart_decode(q))).margin(1e-10));
    }
  }
}

TEST_CASE("step") {
  const HermitianOperator h = HermitianOperator::diagonal((RVec(2) << 0, 1).finished());

  SECTION("deterministic step matches the exact two-level unitary") {
    SdeConfig cfg;
    cfg.sigma = 0.0;
    cfg.dt = 1e-3;
    const ProjectivePoint p = chart_encode(StateVector{Complex(1, 0), Complex(1, 0)}, 0);
    const ProjectivePoint q = step(p, h, cfg, 0.0);
    const CMat u = (Complex(0, -1) * cfg.dt * h.mat()).exp();
    const StateVector exact(CVec(u * chart_decode(p).amps()));
    CHECK(1.0 - fidelity(chart_decode(q), exact) < 1e-10);
  }

  SECTION("eigenvector charts are fixed points") {
    SdeConfig cfg;
    cfg.sigma = 1.0;
    cfg.dt = 1e-3;
    const ProjectivePoint p = chart_encode(StateVector{Complex(0, 0), Complex(1, 0)}, 1);
    const ProjectivePoint q = step(p, h, cfg, 0.37);
    CHECK((q.x - p.x).norm() < 1e-12);
  }

  SECTION("same ray in two charts steps to the same ray") {
    RngStream rng = make_stream(43, 0);
    SdeConfig cfg;
    cfg.sigma = 1.0;
    cfg.dt = 1e-3;
    const HermitianOperator f = random_hermitian(3, rng);
    const StateVector z{Complex(1.0, 0.2), Complex(0.8, -0.4), Complex(0.9, 0.1)};
    // Hamiltonian flow is a genuine vector field: charts agree to O(dt^2) in
    // amplitude. With sigma > 0 the connection correction is chart-dependent
    // on purpose (it compensates second-order chart effects in expectation).
    SdeConfig det = cfg;
    det.sigma = 0.0;
    const ProjectivePoint d0 = step(chart_encode(z, 0), f, det, 0.0);
    const ProjectivePoint d1 = step(chart_encode(z, 1), f, det, 0.0);
    CHECK(1.0 - fidelity(chart_decode(d0), chart_decode(d1)) <
          100.0 * std::pow(det.dt, 4));
    // with noise the schemes differ pathwise at O(dW^2) in amplitude
    const double dw = gaussian(rng, std::sqrt(cfg.dt));
    const ProjectivePoint q0 = step(chart_encode(z, 0), f, cfg, dw);
    const ProjectivePoint q1 = step(chart_encode(z, 1), f, cfg, dw);
    CHECK(1.0 - fidelity(chart_decode(q0), chart_decode(q1)) < 100.0 * dw * dw * dw * dw);
  }
}

TEST_CASE("scalar_drift") {
  RngStream rng = make_stream(44, 0);

  SECTION("commuting observables are drift-free") {
    const RVec dh = (RVec(4) << 0.0, 0.3, 0.7, 1.0).finished();
    const HermitianOperator h = HermitianOperator::diagonal(dh);
    for (int i = 0; i < 20; ++i) {
      const ProjectivePoint p = random_point(4, rng);
      CHECK(std::abs(scalar_drift(h, h, p, 1.0)) < 1e-9);
      CHECK(std::abs(scalar_drift(h.squared(), h, p, 1.0)) < 1e-9);
      const auto eig = eigendecompose(h);
      for (int g = 0; g < 4; ++g) {
        CHECK(std::abs(scalar_drift(eig.group_projector(g), h, p, 1.0)) < 1e-9);
      }
    }
  }

  SECTION("variance observable drifts at -sigma^2 V^2") {
    for (int i = 0; i < 20; ++i) {
      const HermitianOperator h = random_hermitian_unit_norm(4, rng);
      const ProjectivePoint p = random_point(4, rng);
      const double sigma = 1.0;
      const StateVector z = chart_decode(p);
      const double v = variance(h, z);
      // d V = d (H^2) - d (H)^2; Ito gives the quadratic term sigma^2 V^2
      const double drift_v = scalar_drift(h.squared(), h, p, sigma) -
                             2.0 * expectation(h, z) * scalar_drift(h, h, p, sigma) -
                             sigma * sigma * v * v;
      CHECK(drift_v == Catch::Approx(-sigma * sigma * v * v).margin(1e-9));
    }
  }
}

TEST_CASE("one-step Monte Carlo drift agrees with scalar_drift") {
  RngStream rng = make_stream(45, 0);
  const HermitianOperator h = random_hermitian_unit_norm(3, rng);
  const ProjectivePoint p0 = random_point(3, rng);
  const StateVector z0 = chart_decode(p0);
  const auto eig = eigendecompose(h);

  SdeConfig cfg;
  cfg.sigma = 1.0;
  cfg.dt = 1e-3;
  const double sqrt_dt = std::sqrt(cfg.dt);

  std::vector<HermitianOperator> obs{h, h.squared(), eig.group_projector(0),
                                     projector(random_state(3, rng))};
  const long n_draws = 100000;

  SdeIntegrator integ(h, cfg);
  std::vector<RunningMoments> delta(obs.size());
  for (long i = 0; i < n_draws; ++i) {
    ProjectivePoint p = p0;
    integ.advance(p, gaussian(rng, sqrt_dt));
    const StateVector z = chart_decode(p);
    for (std::size_t k = 0; k < obs.size(); ++k) {
      delta[k].add(expectation(obs[k], z) - expectation(obs[k], z0));
    }
  }

  for (std::size_t k = 0; k < obs.size(); ++k) {
    const double predicted = scalar_drift(obs[k], h, p0, cfg.sigma) * cfg.dt;
    const double se = delta[k].standard_error();
    INFO("observable " << k << " mean " << delta[k].mean << " predicted " << predicted
                       << " se " << se);
    CHECK(std::abs(delta[k].mean - predicted) <= 4.0 * se);
    if (k < 3) {
      CHECK(std::abs(scalar_drift(obs[k], h, p0, cfg.sigma)) < 1e-9);  // martingales
    } else {
      CHECK(std::abs(scalar_drift(obs[k], h, p0, cfg.sigma)) > 1e-3);  // contrast case
    }
  }
}

TEST_CASE("evolve") {
  const HermitianOperator h = HermitianOperator::diagonal((RVec(2) << 0, 1).finished());

  SECTION("eigenvector start is a constant resolved trajectory") {
    SdeConfig cfg;
    cfg.sigma = 1.0;
    cfg.dt = 1e-3;
    cfg.t_final = 1.0;
    const TrajectoryRecord rec = evolve(StateVector{Complex(0, 0), Complex(1, 0)}, h, cfg);
    CHECK(rec.outcome == 1);
    for (double v : rec.variance) CHECK(v < 1e-12);
  }

  SECTION("unitary limit keeps V and (H) constant") {
    SdeConfig cfg;
    cfg.sigma = 0.0;
    cfg.dt = 1e-4;
    cfg.t_final = 2.0;
    cfg.stop_on_collapse = false;
    const TrajectoryRecord rec = evolve(StateVector{Complex(1, 0), Complex(1, 0)}, h, cfg);
    CHECK(rec.outcome == kUnresolved);
    for (double v : rec.variance) CHECK(v == Catch::Approx(0.25).margin(1e-3));
    for (double e : rec.energy_expect) CHECK(e == Catch::Approx(0.5).margin(1e-3));
  }

  SECTION("two-level symmetric state resolves") {
    SdeConfig cfg;
    cfg.sigma = 1.0;
    cfg.dt = 1e-3;
    cfg.t_final = 200.0;
    cfg.seed = 7;
    const TrajectoryRecord rec = evolve(StateVector{Complex(1, 0), Complex(1, 0)}, h, cfg);
    CHECK(rec.outcome != kUnresolved);
    CHECK(rec.variance.back() < 1e-6);

    SECTION("projector completeness at every recorded step") {
      for (std::size_t k = 0; k < rec.times.size(); ++k) {
        CHECK(rec.projector_expect.row(static_cast<Eigen::Index>(k)).sum() ==
              Catch::Approx(1.0).margin(1e-9));
      }
    }

    SECTION("collapse drives the pivot to the outcome basis vector") {
      CHECK(rec.pivots.back() == rec.outcome);
    }
  }

  SECTION("non-finite coordinates raise BlowupError") {
    SdeConfig cfg;
    cfg.sigma = 1e160;
    cfg.dt = 1e-3;
    cfg.t_final = 1.0;
    CHECK_THROWS_AS(evolve(StateVector{Complex(1, 0), Complex(1, 0)}, h, cfg), BlowupError);
  }
}

TEST_CASE("terminal statistics are stable under dt halving") {
  const HermitianOperator h = HermitianOperator::diagonal((RVec(2) << 0, 1).finished());
  const StateVector z0{Complex(1, 0), Complex(1, 0)};

  auto terminal_pi0 = [&](double dt) {
    SdeConfig cfg;
    cfg.sigma = 1.0;
    cfg.dt = dt;
    cfg.t_final = 5.0;
    cfg.seed = 1234;
    cfg.record_stride = 1000000;  // only endpoints
    cfg.stop_on_collapse = false;
    std::vector<double> out;
    for (int i = 0; i < 2000; ++i) {
      const TrajectoryRecord rec = evolve(z0, h, cfg, static_cast<std::uint64_t>(i));
      out.push_back(rec.projector_expect(rec.projector_expect.rows() - 1, 0));
    }
    return out;
  };

  const double d = ks_distance(terminal_pi0(2e-3), terminal_pi0(1e-3));
  INFO("KS distance " << d);
  CHECK(d < 0.05);
}
