// de Broglie guidance in normal coordinates and verified trajectory integration.
#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "qrelax/dop853.hpp"
#include "qrelax/wavefunction.hpp"

namespace qrelax {

/// |Psi|^2 below this is treated as a node: the velocity field is undefined there.
inline constexpr double kNodeDensityFloor = 1e-300;

class NearNodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Velocity {
  double v1 = 0.0;
  double v2 = 0.0;
};

/// v_r = Im(d_r Psi / Psi) = Im(d_r Psi conj(Psi)) / |Psi|^2. Throws NearNodeError
/// when |Psi|^2 < kNodeDensityFloor.
Velocity velocity(const WaveFunction& wf, double x1, double x2, double t);

/// Non-throwing form used inside the integrator.
std::optional<Velocity> try_velocity(const WaveFunction& wf, double x1, double x2, double t);

struct IntegratorConfig {
  double tol_start = 1e-9;
  double tol_floor = 1e-16;
  double delta = 5e-3;
  std::vector<double> record_times;
  std::size_t max_steps = 2000000;  // attempted steps per run; near-node paths need a few 10^5
  double min_step = 1e-12;
  // Verify each interval between record times separately, restarting from the
  // agreed position. Off: one comparison at the final time over the whole run.
  bool verify_each_record = false;

  void validate() const;
};

enum class Verdict { kAccepted, kRejected };

struct TrajectorySample {
  double t = 0.0;
  Point2 normal;  // (x_1, x_2)
};

struct Trajectory {
  Point2 initial;  // (x_a, x_b)
  std::vector<TrajectorySample> samples;
  Verdict verdict = Verdict::kRejected;
  double tolerance = 0.0;  // looser tolerance of the agreeing pair; 0 when rejected
  int escalations = 0;     // how many times the tolerance was tightened

  bool accepted() const { return verdict == Verdict::kAccepted; }
  Point2 original(std::size_t i, double mass) const { return from_normal(samples[i].normal, mass); }
};

/// Single adaptive run at absolute tolerance `atol` through `times`, in normal coordinates.
RunResult<2> integrate_once(const WaveFunction& wf, Point2 start_normal, std::span<const double> times,
                            double atol, const IntegratorConfig& cfg);

/// Integrates from `start` (original coordinates) through cfg.record_times, which
/// may run forward or backward in time. Each attempt runs at tolerances tol and
/// tol/10; when the final positions differ by more than delta in either normal
/// coordinate the pair is repeated one order of magnitude tighter, and once the
/// tighter tolerance reaches tol_floor without agreement the trajectory is
/// Rejected. Samples come from the tighter run of the agreeing pair. With
/// verify_each_record the same protocol runs per record interval.
Trajectory integrate_verified(const WaveFunction& wf, Point2 start, const IntegratorConfig& cfg);

/// CSV rows `id,t,x_a,x_b,verdict` (original coordinates) for every sample.
void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories, double mass,
                            bool header = true);

}  // namespace qrelax
