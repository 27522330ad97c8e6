#pragma once

#include "wentzell/assembly.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>

namespace wentzell {

/// Generator for sample `stream` of a seeded experiment. Streams are
/// independent of evaluation order, so parallel sweeps stay reproducible.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline Eigen::VectorXd standard_normal(Index n, std::mt19937_64& rng)
{
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i)
    x(i) = dist(rng);
  return x;
}

/// Standard normal per dof, normalized to unit X2 norm.
inline Eigen::VectorXd random_unit_state(const DiscreteSystem& sys, std::uint64_t seed, std::uint64_t stream)
{
  auto rng = make_rng(seed, stream);
  Eigen::VectorXd x = standard_normal(sys.size(), rng);
  const double nrm = norm_X2(sys, x);
  if (!(nrm > 0.0))
    throw std::runtime_error("random_unit_state: drew the zero vector");
  return x / nrm;
}

} // namespace wentzell
