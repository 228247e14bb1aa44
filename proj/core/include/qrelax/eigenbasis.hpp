// One-dimensional harmonic-oscillator eigenstates (hbar = 1, unit mass).
#pragma once

#include <complex>
#include <span>

namespace qrelax {

using cplx = std::complex<double>;

/// Energy eigenmode of a unit-mass oscillator with angular frequency `omega`.
struct Eigenmode {
  int n = 0;
  double omega = 1.0;

  /// Throws std::domain_error unless n >= 0 and omega > 0 (finite).
  void validate() const;
  double energy() const { return (n + 0.5) * omega; }
};

/// Physicists' Hermite polynomial H_n(u) by upward recurrence.
/// Throws std::range_error if the value overflows.
double hermite(int n, double u);

/// log of the normalisation (omega/pi)^{1/4} (2^n n!)^{-1/2}.
double eigenstate_log_norm(const Eigenmode& mode);

/// psi_n(x, t) = N_n H_n(sqrt(omega) x) exp(-omega x^2 / 2) exp(-i E_n t).
cplx eigenstate(const Eigenmode& mode, double x, double t);

/// d/dx psi_n(x, t), assembled as N_n sqrt(omega) (2n H_{n-1}(u) - u H_n(u)) e^{-u^2/2}.
cplx eigenstate_dx(const Eigenmode& mode, double x, double t);

/// Fills values[j] = phi_j(x) and slopes[j] = phi_j'(x) for j = 0..values.size()-1,
/// where phi_j is the real, time-independent part of psi_j. Uses the normalised
/// Hermite-function recurrence, so no factorials or large H_n appear.
void hermite_functions(double omega, double x, std::span<double> values,
                       std::span<double> slopes);

}  // namespace qrelax
