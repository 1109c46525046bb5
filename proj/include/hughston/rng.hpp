#pragma once

#include "hughston/operator_algebra.hpp"

#include <cstdint>
#include <random>

namespace hughston {

using RngStream = std::mt19937_64;

namespace detail {

// SplitMix64 finalizer; decorrelates the (seed, index) lattice before it is
// handed to the main generator.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// One independent stream per (seed, stream_index); trajectory k of an
// ensemble uses stream_index = k, so results do not depend on scheduling.
inline RngStream make_stream(std::uint64_t seed, std::uint64_t stream_index) {
  const std::uint64_t mixed =
      detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(~stream_index));
  return RngStream(mixed);
}

inline double gaussian(RngStream& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  return n(rng);
}

inline StateVector random_state(Eigen::Index dim, RngStream& rng) {
  CVec z(dim);
  for (Eigen::Index k = 0; k < dim; ++k) z(k) = Complex(gaussian(rng), gaussian(rng));
  if (z.norm() == 0.0) z(0) = 1.0;  // measure-zero fallback
  return StateVector(std::move(z));
}

inline HermitianOperator random_hermitian(Eigen::Index dim, RngStream& rng) {
  CMat m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = Complex(gaussian(rng), gaussian(rng));
  }
  return HermitianOperator(m);
}

// Random Hermitian draw rescaled to unit spectral norm.
inline HermitianOperator random_hermitian_unit_norm(Eigen::Index dim, RngStream& rng) {
  HermitianOperator h = random_hermitian(dim, rng);
  Eigen::SelfAdjointEigenSolver<CMat> es(h.mat(), Eigen::EigenvaluesOnly);
  const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
  if (norm == 0.0) return h;
  return HermitianOperator(h.mat() / norm);
}

}  // namespace hughston
