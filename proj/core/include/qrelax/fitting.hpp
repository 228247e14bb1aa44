// Fits of H(t) to (H0 - R) exp(-t/tau) + R and cross-preset aggregation.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qrelax/metrics.hpp"

namespace qrelax {

inline double decay_model(double t, double h0, double tau, double residue) {
  return (h0 - residue) * std::exp(-t / tau) + residue;
}

struct FitOptions {
  double tau_min = 1e-3;
  double tau_max = 1e5;
  double rel_tolerance = 1e-8;
  int max_iterations = 500;
};

struct RelaxationFit {
  double h0 = 0.0;
  double tau = 0.0;
  double residue = 0.0;
  double rms_residual = 0.0;
  bool converged = false;
  bool degenerate = false;  // flat series: tau pinned at its upper bound
  int iterations = 0;
  std::array<double, 3> std_errors{};  // (h0, tau, residue), from s^2 (J^T J)^{-1}
  std::vector<double> objective_history;  // sum of squares after each accepted step
  std::string warning;
};

/// Bound-constrained Levenberg-Marquardt fit. Bounds: tau in [tau_min, tau_max],
/// R in [0, max H], H0 in [0, 2 max H]. Requires at least 6 finite points.
RelaxationFit fit_decay(std::span<const double> times, std::span<const double> values,
                        const FitOptions& options = {});
RelaxationFit fit_decay(const HSeries& series, const FitOptions& options = {});

enum class StdConvention { kSample, kPopulation };

struct FitAggregate {
  std::vector<RelaxationFit> fits;
  double mean_tau = 0.0;
  double std_tau = 0.0;
  double mean_residue = 0.0;
  double std_residue = 0.0;
  double mean_h0 = 0.0;  // mean of the supplied initial H values
  double residue_fraction = 0.0;  // mean_residue / mean_h0
};

/// Means and standard deviations over presets (sample convention by default).
FitAggregate aggregate(std::span<const RelaxationFit> fits, std::span<const double> initial_h,
                       StdConvention convention = StdConvention::kSample);

struct FitRecord {
  int modes = 0;
  double coupling = 0.0;
  std::uint64_t preset_seed = 0;
  RelaxationFit fit;
};

/// fits.csv: M,k,preset_seed,H0,tau,R,rms,converged
void write_fits_csv(std::ostream& out, std::span<const FitRecord> records);

}  // namespace qrelax
