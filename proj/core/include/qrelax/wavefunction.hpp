// Superposed wave function of two linearly coupled oscillators, expressed in
// the normal coordinates that decouple them.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "qrelax/eigenbasis.hpp"

namespace qrelax {

struct Frequencies {
  double omega1 = 1.0;
  double omega2 = 1.0;
};

/// Normal-mode frequencies sqrt(omega^2 +- k/2). Requires omega > 0, 0 <= k < 2 omega^2.
Frequencies build_frequencies(double omega, double k);

/// Bare parameters of H = p^2/2m + m omega^2 x^2/2 (per oscillator) + (m k/2) x_a x_b.
struct OscillatorModel {
  double mass = 1.0;
  double omega = 1.0;
  double coupling = 0.0;

  void validate() const;
  Frequencies frequencies() const { return build_frequencies(omega, coupling); }
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// (x_a, x_b) -> (x_1, x_2) = sqrt(m/2) (x_a + x_b, x_a - x_b).
Point2 to_normal(Point2 original, double mass);
/// Inverse of to_normal: (x_a, x_b) = sqrt(1/2m) (x_1 + x_2, x_1 - x_2).
Point2 from_normal(Point2 normal, double mass);

struct ModePair {
  int n1 = 0;
  int n2 = 0;

  friend auto operator<=>(const ModePair&, const ModePair&) = default;
};

/// M distinct (n1, n2) modes with phases theta in [0, 1); c = e^{2 pi i theta} / sqrt(M).
struct ModeSet {
  std::vector<ModePair> modes;
  std::vector<double> phases;
  int n_max = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return modes.size(); }
  void validate() const;
  std::vector<cplx> coefficients() const;

  /// Plain-text record that round-trips exactly (phases printed with 17 digits).
  void write(std::ostream& out) const;
  static ModeSet read(std::istream& in);
  std::string to_string() const;
};

/// Draws M distinct pairs uniformly without replacement from {0..n_max}^2 and
/// M phases uniform on [0, 1). Fully determined by `seed`.
ModeSet sample_mode_set(int count, int n_max, std::uint64_t seed);

/// Psi and its normal-coordinate gradient at one point.
struct PsiEval {
  cplx psi;
  cplx d1;
  cplx d2;
};

/// Immutable Psi(x_1, x_2, t) = sum c psi_{n1}(x_1, t; Omega_1) psi_{n2}(x_2, t; Omega_2).
/// All evaluation methods are const and thread-safe.
class WaveFunction {
 public:
  static constexpr int kMaxQuantumNumber = 63;

  WaveFunction(OscillatorModel model, ModeSet modes);

  const OscillatorModel& model() const { return model_; }
  const ModeSet& mode_set() const { return modes_; }
  const Frequencies& frequencies() const { return freq_; }
  double mass() const { return model_.mass; }

  PsiEval evaluate(double x1, double x2, double t) const;
  cplx psi(double x1, double x2, double t) const;
  std::pair<cplx, cplx> grad_psi(double x1, double x2, double t) const;

  /// |Psi|^2 in normal coordinates.
  double density_normal(double x1, double x2, double t) const;
  /// m |Psi|^2 at the normal-coordinate image of (x_a, x_b); integrates to one over (x_a, x_b).
  double density_original(double xa, double xb, double t) const;

  /// Rigorous upper bound on density_original, from Cramer's inequality on Hermite functions.
  double density_original_bound() const;

 private:
  template <bool WithGradient>
  PsiEval evaluate_impl(double x1, double x2, double t) const;

  OscillatorModel model_;
  ModeSet modes_;
  Frequencies freq_;
  std::vector<cplx> coeffs_;
  int n1_top_ = 0;
  int n2_top_ = 0;
};

}  // namespace qrelax
